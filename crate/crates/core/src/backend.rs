//! The trajectory-generation contract shared by the simulator and the HTTP
//! client.

use std::sync::Arc;

use crate::error::Result;
use crate::types::{PathRecord, QueryRecord};

/// Outcome of one continuation, without materializing its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub correct: bool,
    pub answer: String,
    pub completion_tokens: u64,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Generates up to `prefix_len` tokens and captures the checkpoint state.
    fn launch_prefix(
        &self,
        query: &QueryRecord,
        path_id: u32,
        prefix_len: usize,
    ) -> Result<PathRecord>;

    /// Completes a launched path.
    fn resume_path(&self, query: &QueryRecord, path: PathRecord) -> Result<PathRecord>;

    /// `k` independent completions sharing the prefix of `path`. Calls with the
    /// same `salt` repeat the same draws.
    fn rollout_from_prefix(
        &self,
        query: &QueryRecord,
        path: &PathRecord,
        k: usize,
        salt: u64,
    ) -> Result<Vec<PathRecord>>;

    /// Same draws as [`Backend::rollout_from_prefix`], reduced to their outcomes.
    fn rollout_outcomes(
        &self,
        query: &QueryRecord,
        path: &PathRecord,
        k: usize,
        salt: u64,
    ) -> Result<Vec<RolloutOutcome>> {
        Ok(self
            .rollout_from_prefix(query, path, k, salt)?
            .into_iter()
            .map(|p| RolloutOutcome {
                correct: p.is_correct.unwrap_or(false),
                answer: p.answer.unwrap_or_default(),
                completion_tokens: p.completion_tokens,
            })
            .collect())
    }

    /// An independent backend stream for another consumer (labeler, stratifier).
    fn fork(&self, label: &str) -> Arc<dyn Backend>;
}
