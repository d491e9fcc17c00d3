//! Accuracy, consensus and token-efficiency metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PathOutcome, PathStatus};

/// Answers are compared after trimming surrounding whitespace; nothing more.
pub fn normalize_answer(answer: &str) -> &str {
    answer.trim()
}

pub fn answers_match(a: &str, b: &str) -> bool {
    normalize_answer(a) == normalize_answer(b)
}

/// Per-query accuracy over completed paths, in query-id order.
///
/// Pruned paths are skipped. A launched path, or a completed path without a
/// correctness verdict, is an error.
pub fn accuracy_by_query<P: PathOutcome>(records: &[P]) -> Result<Vec<(String, f64, usize)>> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        match r.status() {
            PathStatus::Pruned => continue,
            PathStatus::Launched => {
                return Err(Error::invalid(format!(
                    "query {}: path still launched, accuracy undefined",
                    r.query_id()
                )))
            }
            PathStatus::Completed => {}
        }
        let correct = r.is_correct().ok_or_else(|| {
            Error::invalid(format!(
                "query {}: completed path without correctness",
                r.query_id()
            ))
        })?;
        let e = tally.entry(r.query_id()).or_default();
        e.0 += usize::from(correct);
        e.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|(q, (hits, n))| (q.to_string(), hits as f64 / n as f64, n))
        .collect())
}

/// Mean per-path accuracy, macro-averaged over queries.
///
/// Applied to a baseline run this is avg@k; applied to the survivors of a
/// pruned run it is avg@m|k.
pub fn avg_at_k<P: PathOutcome>(records: &[P]) -> Result<f64> {
    let per_query = accuracy_by_query(records)?;
    if per_query.is_empty() {
        return Err(Error::EmptyDataset("no completed paths"));
    }
    Ok(per_query.iter().map(|(_, acc, _)| acc).sum::<f64>() / per_query.len() as f64)
}

/// Most frequent answer. Ties go to the group with the higher mean tie score,
/// then to the lexicographically smallest answer.
pub fn majority_vote<S: AsRef<str>>(answers: &[S], tie_scores: Option<&[f64]>) -> Result<String> {
    if answers.is_empty() {
        return Err(Error::EmptyDataset("majority vote over no answers"));
    }
    if let Some(scores) = tie_scores {
        if scores.len() != answers.len() {
            return Err(Error::invalid(format!(
                "{} tie scores for {} answers",
                scores.len(),
                answers.len()
            )));
        }
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        let s = tie_scores.map_or(0.0, |t| t[i]);
        groups.entry(normalize_answer(a.as_ref())).or_default().push(s);
    }
    let mut best: Option<(&str, usize, f64)> = None;
    for (answer, mut scores) in groups {
        // summation order fixed so the mean does not depend on input order
        scores.sort_by(f64::total_cmp);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let count = scores.len();
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean > bm),
        };
        if better {
            best = Some((answer, count, mean));
        }
    }
    Ok(best.map(|(a, _, _)| a.to_string()).unwrap())
}

/// Relative token saving in percent.
pub fn token_reduction(tokens_original: u64, tokens_pruned: u64) -> Result<f64> {
    if tokens_original == 0 {
        return Err(Error::DivisionByZero("token_reduction with zero original tokens"));
    }
    Ok((tokens_original as f64 - tokens_pruned as f64) / tokens_original as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVote {
    pub query_id: String,
    pub voted_answer: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIssue {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub value: f64,
    pub votes: Vec<QueryVote>,
    pub issues: Vec<QueryIssue>,
}

/// Fraction of queries whose majority-voted answer equals the gold answer.
///
/// Queries without completed paths (or without a gold answer) are reported in
/// `issues` and left out of the mean.
pub fn cons_at_n<P, F>(
    records: &[P],
    gold: &BTreeMap<String, String>,
    tie_score: F,
) -> Result<ConsensusSummary>
where
    P: PathOutcome,
    F: Fn(&P) -> Option<f64>,
{
    let mut by_query: BTreeMap<&str, Vec<&P>> = BTreeMap::new();
    for r in records {
        by_query.entry(r.query_id()).or_default();
        if r.status() == PathStatus::Completed {
            by_query.get_mut(r.query_id()).unwrap().push(r);
        }
    }
    let mut votes = Vec::new();
    let mut issues = Vec::new();
    for (qid, paths) in by_query {
        let Some(g) = gold.get(qid) else {
            issues.push(QueryIssue {
                query_id: qid.to_string(),
                reason: "no gold answer".into(),
            });
            continue;
        };
        let answers: Vec<&str> = paths.iter().filter_map(|p| p.answer()).collect();
        if answers.is_empty() || answers.len() != paths.len() {
            issues.push(QueryIssue {
                query_id: qid.to_string(),
                reason: if paths.is_empty() {
                    "no completed paths".into()
                } else {
                    "completed path without answer".into()
                },
            });
            continue;
        }
        let scores: Option<Vec<f64>> = paths.iter().map(|p| tie_score(p)).collect();
        let voted = majority_vote(&answers, scores.as_deref())?;
        votes.push(QueryVote {
            query_id: qid.to_string(),
            correct: answers_match(&voted, g),
            voted_answer: voted,
        });
    }
    if votes.is_empty() {
        return Err(Error::EmptyDataset("no query produced a vote"));
    }
    let value = votes.iter().filter(|v| v.correct).count() as f64 / votes.len() as f64;
    Ok(ConsensusSummary {
        value,
        votes,
        issues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    pub query_id: String,
    pub retained: Vec<u32>,
    pub accuracy: f64,
    pub baseline_accuracy: Option<f64>,
    pub voted_answer: Option<String>,
    pub vote_correct: Option<bool>,
    pub tokens: u64,
}

/// Summary of one run, optionally against its unpruned baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_name: String,
    pub dataset: String,
    pub method: String,
    pub launch_count: usize,
    pub retain_count: usize,
    /// avg@N of the unpruned baseline, when one was run.
    pub avg_at_k: Option<f64>,
    /// avg@k|N over the retained paths.
    pub avg_at_m_given_k: f64,
    pub cons_at_n: f64,
    pub baseline_cons_at_n: Option<f64>,
    pub tokens_total: u64,
    pub tokens_baseline: Option<u64>,
    pub token_reduction_pct: Option<f64>,
    pub per_query_breakdown: Vec<QueryBreakdown>,
    #[serde(default)]
    pub issues: Vec<QueryIssue>,
}

pub const METRICS_CSV_HEADER: &str = "run_name,dataset,method,launch_count,retain_count,avg_at_k,avg_at_m_given_k,cons_at_n,baseline_cons_at_n,tokens_total,tokens_baseline,token_reduction_pct";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let rates = [Some(self.avg_at_m_given_k), Some(self.cons_at_n), self.avg_at_k, self.baseline_cons_at_n];
        for r in rates.into_iter().flatten() {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Numeric(format!("rate {r} outside [0,1]")));
            }
        }
        if let Some(t) = self.token_reduction_pct {
            if t > 100.0 {
                return Err(Error::Numeric(format!("token reduction {t} above 100%")));
            }
        }
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        [
            csv_field(&self.run_name),
            csv_field(&self.dataset),
            csv_field(&self.method),
            self.launch_count.to_string(),
            self.retain_count.to_string(),
            opt(self.avg_at_k),
            self.avg_at_m_given_k.to_string(),
            self.cons_at_n.to_string(),
            opt(self.baseline_cons_at_n),
            self.tokens_total.to_string(),
            opt(self.tokens_baseline),
            opt(self.token_reduction_pct),
        ]
        .join(",")
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{METRICS_CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn from_csv(text: &str) -> Result<Vec<MetricsRow>> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != METRICS_CSV_HEADER {
            return Err(Error::invalid("unrecognized metrics.csv header"));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(MetricsRow::parse)
            .collect()
    }
}

/// A parsed metrics.csv row, used when collating runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_name: String,
    pub dataset: String,
    pub method: String,
    pub launch_count: usize,
    pub retain_count: usize,
    pub avg_at_k: Option<f64>,
    pub avg_at_m_given_k: f64,
    pub cons_at_n: f64,
    pub baseline_cons_at_n: Option<f64>,
    pub tokens_total: u64,
    pub tokens_baseline: Option<u64>,
    pub token_reduction_pct: Option<f64>,
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

impl MetricsRow {
    fn parse(line: &str) -> Result<Self> {
        let f = split_csv(line);
        if f.len() != 12 {
            return Err(Error::invalid(format!("metrics row has {} fields", f.len())));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in metrics row")))
        }
        fn opt_num<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        }
        Ok(MetricsRow {
            run_name: f[0].clone(),
            dataset: f[1].clone(),
            method: f[2].clone(),
            launch_count: num(&f[3])?,
            retain_count: num(&f[4])?,
            avg_at_k: opt_num(&f[5])?,
            avg_at_m_given_k: num(&f[6])?,
            cons_at_n: num(&f[7])?,
            baseline_cons_at_n: opt_num(&f[8])?,
            tokens_total: num(&f[9])?,
            tokens_baseline: opt_num(&f[10])?,
            token_reduction_pct: opt_num(&f[11])?,
        })
    }
}
