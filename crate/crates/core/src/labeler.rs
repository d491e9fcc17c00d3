//! Monte-Carlo supervision for the learned scorer.
//!
//! Each labeled prefix carries the empirical success rate of K continuations
//! from that prefix. Training queries are first stratified by difficulty so
//! the labels are informative.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{PathRecord, QueryRecord};

pub const LABELS_FORMAT: &str = "pathprune-labels";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Continuations per prefix.
    pub rollouts: usize,
    pub prefix_length: usize,
    pub prefixes_per_query: usize,
    /// Full paths sampled per query for stratification.
    pub stratify_rollouts: usize,
    /// Inclusive pass-count bounds for a query to be kept.
    pub lower: usize,
    pub upper: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            rollouts: 32,
            prefix_length: 2048,
            prefixes_per_query: 4,
            stratify_rollouts: 32,
            lower: 4,
            upper: 28,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(Error::config("rollouts must be >= 1"));
        }
        if self.prefix_length == 0 || self.prefixes_per_query == 0 {
            return Err(Error::config("prefix_length and prefixes_per_query must be >= 1"));
        }
        if self.lower > self.upper {
            return Err(Error::config(format!("lower {} exceeds upper {}", self.lower, self.upper)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrefix {
    pub query_id: String,
    pub path_id: u32,
    pub features: Vec<f64>,
    pub s_mc: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Correctness of each rollout as a `0`/`1` string.
    #[serde(with = "bits")]
    pub outcomes: Vec<bool>,
}

impl LabeledPrefix {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.len() != self.k || self.k == 0 {
            return Err(Error::invalid(format!(
                "{}/{}: {} outcomes for K = {}",
                self.query_id,
                self.path_id,
                self.outcomes.len(),
                self.k
            )));
        }
        if self.s_mc != mean_bits(&self.outcomes) {
            return Err(Error::invalid(format!(
                "{}/{}: s_mc {} is not the mean of its outcomes",
                self.query_id, self.path_id, self.s_mc
            )));
        }
        Ok(())
    }
}

mod bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let s = String::deserialize(d)?;
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!("bad outcome bit {other:?}"))),
            })
            .collect()
    }
}

fn mean_bits(b: &[bool]) -> f64 {
    b.iter().filter(|&&x| x).count() as f64 / b.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub prefix_length: usize,
    pub prefixes_per_query: usize,
    pub queries: usize,
    pub records: usize,
    /// Tokens generated by all rollouts.
    pub rollout_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<LabeledPrefix>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratification {
    pub retained: Vec<QueryRecord>,
    pub pass_counts: Vec<(String, usize)>,
}

/// Keeps queries whose pass count over `rollouts` full paths lies in
/// `[lower, upper]`.
pub fn stratify_queries(
    queries: &[QueryRecord],
    backend: &dyn Backend,
    rollouts: usize,
    lower: usize,
    upper: usize,
    prefix_length: usize,
) -> Result<Stratification> {
    let counts: Vec<usize> = queries
        .par_iter()
        .map(|q| {
            let mut passes = 0;
            for i in 0..rollouts {
                let launched = backend.launch_prefix(q, i as u32 + 1, prefix_length)?;
                if backend.resume_path(q, launched)?.is_correct == Some(true) {
                    passes += 1;
                }
            }
            Ok(passes)
        })
        .collect::<Result<_>>()?;
    let mut retained = Vec::new();
    for (q, &c) in queries.iter().zip(&counts) {
        if (lower..=upper).contains(&c) {
            retained.push(q.clone());
        }
    }
    log::info!("stratified {} of {} queries into [{lower}, {upper}]", retained.len(), queries.len());
    Ok(Stratification {
        retained,
        pass_counts: queries.iter().map(|q| q.query_id.clone()).zip(counts).collect(),
    })
}

/// Labels a launched prefix with the success rate of `k` continuations.
/// `salt` selects the rollout draws; the same salt repeats them.
pub fn mc_label(
    backend: &dyn Backend,
    query: &QueryRecord,
    prefix: &PathRecord,
    k: usize,
    salt: u64,
) -> Result<(LabeledPrefix, u64)> {
    if k == 0 {
        return Err(Error::invalid("rollout count K must be >= 1"));
    }
    let outcomes = backend.rollout_outcomes(query, prefix, k, salt)?;
    let tokens = outcomes.iter().map(|o| o.completion_tokens).sum();
    let bits: Vec<bool> = outcomes.iter().map(|o| o.correct).collect();
    Ok((
        LabeledPrefix {
            query_id: prefix.query_id.clone(),
            path_id: prefix.path_id,
            features: prefix.checkpoint_features.clone().unwrap_or_default(),
            s_mc: mean_bits(&bits),
            k,
            outcomes: bits,
        },
        tokens,
    ))
}

/// Launches `prefixes_per_query` prefixes per query and labels each one.
/// Records come out in query order, then path order.
pub fn build_dataset(
    queries: &[QueryRecord],
    backend: &dyn Backend,
    config: &LabelConfig,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    let m = config.prefixes_per_query;
    let jobs: Vec<(usize, u32)> = (0..queries.len())
        .flat_map(|qi| (1..=m as u32).map(move |p| (qi, p)))
        .collect();
    let labeled: Vec<(LabeledPrefix, u64)> = jobs
        .par_iter()
        .map(|&(qi, pid)| {
            let q = &queries[qi];
            let prefix = backend.launch_prefix(q, pid, config.prefix_length)?;
            if prefix.checkpoint_features.is_none() {
                return Err(Error::invalid(format!(
                    "backend `{}` captured no checkpoint features",
                    backend.name()
                )));
            }
            let salt = Stream::new(seed)
                .label("mc")
                .label(&q.query_id)
                .index(u64::from(pid))
                .seed();
            mc_label(backend, q, &prefix, config.rollouts, salt)
        })
        .collect::<Result<_>>()?;
    let rollout_tokens = labeled.iter().map(|(_, t)| t).sum();
    let records: Vec<LabeledPrefix> = labeled.into_iter().map(|(r, _)| r).collect();
    Ok(Dataset {
        header: DatasetHeader {
            format: LABELS_FORMAT.into(),
            seed,
            k: config.rollouts,
            prefix_length: config.prefix_length,
            prefixes_per_query: m,
            queries: queries.len(),
            records: records.len(),
            rollout_tokens,
        },
        records,
    })
}

impl Dataset {
    /// Header line followed by one record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut emit = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
        emit(serde_json::to_string(&self.header)?)?;
        for r in &self.records {
            emit(serde_json::to_string(r)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                    hint: "run the label step first".into(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, source| Error::Parse {
            path: path.to_path_buf(),
            line,
            source,
        };
        let header: DatasetHeader = match lines.next() {
            Some((_, l)) => {
                serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| parse_err(1, e))?
            }
            None => return Err(Error::EmptyDataset("label file has no header")),
        };
        if header.format != LABELS_FORMAT {
            return Err(Error::config(format!("{}: not a label file", path.display())));
        }
        let mut records = Vec::new();
        for (i, l) in lines {
            let l = l.map_err(|e| Error::io(path, e))?;
            if l.trim().is_empty() {
                continue;
            }
            let r: LabeledPrefix = serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e))?;
            r.validate()?;
            records.push(r);
        }
        Ok(Dataset { header, records })
    }
}
