//! Domain records shared by every stage of the engine.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub prompt: String,
    pub gold_answer: String,
    /// Latent difficulty; only the simulator knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_success_prob: Option<f64>,
    /// Reference completion length in tokens.
    pub task_length_ref: u64,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.base_success_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "query {}: base_success_prob {p} outside [0,1]",
                    self.query_id
                )));
            }
        }
        if self.task_length_ref == 0 {
            return Err(Error::invalid(format!(
                "query {}: task_length_ref must be >= 1",
                self.query_id
            )));
        }
        Ok(())
    }
}

/// Checks that every query id in `queries` is distinct.
pub fn validate_queries(queries: &[QueryRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(queries.len());
    for q in queries {
        q.validate()?;
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::invalid(format!("duplicate query_id {}", q.query_id)));
        }
    }
    Ok(())
}

/// Writes one query per line.
pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    let mut text = String::new();
    for q in queries {
        text.push_str(&serde_json::to_string(q)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run the simulate step first".into(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    let queries = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect::<Result<Vec<QueryRecord>>>()?;
    validate_queries(&queries)?;
    Ok(queries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathStatus {
    Launched,
    Pruned,
    Completed,
}

impl fmt::Display for PathStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathStatus::Launched => "launched",
            PathStatus::Pruned => "pruned",
            PathStatus::Completed => "completed",
        })
    }
}

/// Hidden quality of a simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub quality: f64,
    pub true_success_prob: f64,
    /// Full trajectory length drawn at launch.
    pub total_length: u64,
}

/// One trajectory, from launch through pruning or completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub query_id: String,
    pub path_id: u32,
    pub tokens: Vec<u32>,
    pub token_logprobs: Vec<f64>,
    /// Decoded text, for backends that speak text.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    pub checkpoint_features: Option<Vec<f64>>,
    pub status: PathStatus,
    pub answer: Option<String>,
    pub is_correct: Option<bool>,
    /// Tokens generated during launch.
    pub prefix_tokens: u64,
    /// Tokens generated during resume.
    #[serde(default)]
    pub completion_tokens: u64,
    /// Context tokens re-submitted on resume when the backend cannot keep a cache.
    #[serde(default)]
    pub reencode_tokens: u64,
    /// The trajectory ended before reaching the checkpoint.
    #[serde(default)]
    pub early_finish: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentPath>,
}

impl PathRecord {
    pub fn expect_status(&self, expected: PathStatus) -> Result<()> {
        if self.status == expected {
            Ok(())
        } else {
            Err(Error::Lifecycle {
                query_id: self.query_id.clone(),
                path_id: self.path_id,
                status: self.status.to_string(),
                expected: match expected {
                    PathStatus::Launched => "launched",
                    PathStatus::Pruned => "pruned",
                    PathStatus::Completed => "completed",
                },
            })
        }
    }

    /// Marks a launched path as discarded. Pruned paths never carry an answer.
    pub fn prune(&mut self) -> Result<()> {
        self.expect_status(PathStatus::Launched)?;
        self.status = PathStatus::Pruned;
        self.answer = None;
        self.is_correct = None;
        Ok(())
    }

    pub fn generated_tokens(&self) -> u64 {
        self.prefix_tokens + self.completion_tokens
    }

    pub fn summary(&self, score: Option<f64>) -> PathSummary {
        PathSummary {
            query_id: self.query_id.clone(),
            path_id: self.path_id,
            status: self.status,
            score,
            answer: self.answer.clone(),
            is_correct: self.is_correct,
            prefix_tokens: self.prefix_tokens,
            completion_tokens: self.completion_tokens,
            reencode_tokens: self.reencode_tokens,
            early_finish: self.early_finish,
        }
    }
}

/// Token-free view of a path kept after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub query_id: String,
    pub path_id: u32,
    pub status: PathStatus,
    pub score: Option<f64>,
    pub answer: Option<String>,
    pub is_correct: Option<bool>,
    pub prefix_tokens: u64,
    pub completion_tokens: u64,
    pub reencode_tokens: u64,
    pub early_finish: bool,
}

/// What the metrics need to know about a path.
pub trait PathOutcome {
    fn query_id(&self) -> &str;
    fn status(&self) -> PathStatus;
    fn answer(&self) -> Option<&str>;
    fn is_correct(&self) -> Option<bool>;
}

impl PathOutcome for PathRecord {
    fn query_id(&self) -> &str {
        &self.query_id
    }
    fn status(&self) -> PathStatus {
        self.status
    }
    fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }
    fn is_correct(&self) -> Option<bool> {
        self.is_correct
    }
}

impl PathOutcome for PathSummary {
    fn query_id(&self) -> &str {
        &self.query_id
    }
    fn status(&self) -> PathStatus {
        self.status
    }
    fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }
    fn is_correct(&self) -> Option<bool> {
        self.is_correct
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal scores at the k-th rank go to the lower path id.
    #[default]
    LowerPathId,
}

/// How many launched paths survive the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRetention", into = "RawRetention")]
pub struct RetentionPolicy {
    pub prefix_length: usize,
    pub retain: Retain,
    pub tie_break: TieBreak,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retain {
    Count(usize),
    Ratio(f64),
}

#[derive(Serialize, Deserialize)]
struct RawRetention {
    prefix_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retain_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retain_ratio: Option<f64>,
    #[serde(default)]
    tie_break: TieBreak,
}

impl TryFrom<RawRetention> for RetentionPolicy {
    type Error = Error;

    fn try_from(raw: RawRetention) -> Result<Self> {
        let retain = match (raw.retain_count, raw.retain_ratio) {
            (Some(k), None) => Retain::Count(k),
            (None, Some(g)) => Retain::Ratio(g),
            _ => {
                return Err(Error::config(
                    "exactly one of retain_count or retain_ratio must be set",
                ))
            }
        };
        let policy = RetentionPolicy {
            prefix_length: raw.prefix_length,
            retain,
            tie_break: raw.tie_break,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl From<RetentionPolicy> for RawRetention {
    fn from(p: RetentionPolicy) -> Self {
        let (retain_count, retain_ratio) = match p.retain {
            Retain::Count(k) => (Some(k), None),
            Retain::Ratio(g) => (None, Some(g)),
        };
        RawRetention {
            prefix_length: p.prefix_length,
            retain_count,
            retain_ratio,
            tie_break: p.tie_break,
        }
    }
}

impl RetentionPolicy {
    pub fn top_k(prefix_length: usize, k: usize) -> Self {
        RetentionPolicy {
            prefix_length,
            retain: Retain::Count(k),
            tie_break: TieBreak::LowerPathId,
        }
    }

    pub fn ratio(prefix_length: usize, gamma: f64) -> Self {
        RetentionPolicy {
            prefix_length,
            retain: Retain::Ratio(gamma),
            tie_break: TieBreak::LowerPathId,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prefix_length == 0 {
            return Err(Error::config("prefix_length must be >= 1"));
        }
        match self.retain {
            Retain::Count(0) => Err(Error::config("retain_count must be >= 1")),
            Retain::Ratio(g) if !(g > 0.0 && g <= 1.0) => {
                Err(Error::config(format!("retain_ratio {g} outside (0,1]")))
            }
            _ => Ok(()),
        }
    }

    /// Resolves k for a launch of `n` paths. A ratio rounds to the nearest
    /// integer and never drops below one path.
    pub fn retain_count(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if n == 0 {
            return Err(Error::config("launch count must be >= 1"));
        }
        let k = match self.retain {
            Retain::Count(k) => k,
            Retain::Ratio(g) => ((g * n as f64).round() as usize).clamp(1, n),
        };
        if k > n {
            return Err(Error::config(format!(
                "retain_count {k} exceeds launch count {n}"
            )));
        }
        Ok(k)
    }
}

/// Token accounting for a run. Counters only ever grow and may be bumped
/// from any worker thread.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    prefix: AtomicU64,
    resume: AtomicU64,
    check: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub prefix_tokens: u64,
    pub resume_tokens: u64,
    pub check_tokens: u64,
    pub total: u64,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_prefix(&self, tokens: u64) {
        self.prefix.fetch_add(tokens, Ordering::Relaxed);
    }

    pub fn add_resume(&self, tokens: u64) {
        self.resume.fetch_add(tokens, Ordering::Relaxed);
    }

    pub fn add_check(&self, tokens: u64) {
        self.check.fetch_add(tokens, Ordering::Relaxed);
    }

    pub fn prefix_tokens(&self) -> u64 {
        self.prefix.load(Ordering::Relaxed)
    }

    pub fn resume_tokens(&self) -> u64 {
        self.resume.load(Ordering::Relaxed)
    }

    pub fn check_tokens(&self) -> u64 {
        self.check.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.snapshot().total
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let prefix_tokens = self.prefix_tokens();
        let resume_tokens = self.resume_tokens();
        let check_tokens = self.check_tokens();
        LedgerSnapshot {
            prefix_tokens,
            resume_tokens,
            check_tokens,
            total: prefix_tokens + resume_tokens + check_tokens,
        }
    }
}
