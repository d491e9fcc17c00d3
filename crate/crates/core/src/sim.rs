//! Seeded synthetic trajectory backend.
//!
//! Each path carries a hidden quality `z`; its success probability is a fixed
//! monotone squashing of `z`. Checkpoint features are a noisy affine image of
//! `z` (plus nuisance dimensions), and token log-probabilities track `z` with
//! a configurable degree of miscalibration. All draws come from per-path
//! substreams, so the backend is stateless and safe to share across threads.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, RolloutOutcome};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::types::{LatentPath, PathRecord, PathStatus, QueryRecord};

/// Lower/upper margin keeping success probabilities away from 0 and 1.
pub const SUCCESS_EPS: f64 = 1e-3;

/// Standard deviation of the standard logistic distribution.
const LOGISTIC_SD: f64 = PI / 1.732_050_807_568_877_2;

/// Number of distinct answers a gold answer is drawn from.
const ANSWER_SPACE: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub feature_dim: usize,
    /// Leading feature dimensions that carry the latent quality.
    pub signal_dims: usize,
    pub vocab_size: u32,
    /// Mean reference task length across queries (tokens).
    pub length_mean: f64,
    /// Log-space spread of task length across queries.
    pub length_sigma: f64,
    /// Log-space spread of a path's length around its query's reference.
    pub path_length_sigma: f64,
    pub difficulty_alpha: f64,
    pub difficulty_beta: f64,
    /// Spread of path quality around the query's difficulty (logit scale).
    pub path_quality_sigma: f64,
    pub confidence_miscalibration: f64,
    /// Feature noise at `feature_reference_prefix` tokens; shrinks as the
    /// prefix grows.
    pub feature_noise: f64,
    pub feature_reference_prefix: usize,
    pub distractor_count: usize,
    pub distractor_zipf: f64,
    pub judge_noise: f64,
    /// Append completion tokens on resume instead of only counting them.
    pub materialize_completions: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            feature_dim: 16,
            signal_dims: 4,
            vocab_size: 4096,
            length_mean: 8650.0,
            length_sigma: 0.3,
            path_length_sigma: 0.25,
            difficulty_alpha: 1.0,
            difficulty_beta: 1.0,
            path_quality_sigma: 1.0,
            confidence_miscalibration: 0.5,
            feature_noise: 1.0,
            feature_reference_prefix: 2048,
            distractor_count: 8,
            distractor_zipf: 1.0,
            judge_noise: 0.1,
            materialize_completions: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("sim: {m}")));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.signal_dims == 0 || self.signal_dims > self.feature_dim {
            return bad("signal_dims must be in 1..=feature_dim");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.length_mean.is_nan() || self.length_mean < 1.0 {
            return bad("length_mean must be >= 1");
        }
        for (name, v) in [
            ("length_sigma", self.length_sigma),
            ("path_length_sigma", self.path_length_sigma),
            ("path_quality_sigma", self.path_quality_sigma),
            ("feature_noise", self.feature_noise),
            ("judge_noise", self.judge_noise),
            ("distractor_zipf", self.distractor_zipf),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.difficulty_alpha > 0.0 && self.difficulty_beta > 0.0) {
            return bad("difficulty_alpha/beta must be positive");
        }
        if !(0.0..=1.0).contains(&self.confidence_miscalibration) {
            return bad("confidence_miscalibration must be in [0,1]");
        }
        if self.feature_reference_prefix == 0 {
            return bad("feature_reference_prefix must be positive");
        }
        if self.distractor_count == 0 || self.distractor_count >= ANSWER_SPACE as usize {
            return bad("distractor_count must be in 1..1000");
        }
        Ok(())
    }
}

/// Success probability of a path with quality `z`: logistic, squeezed into
/// `(SUCCESS_EPS, 1 - SUCCESS_EPS)`.
pub fn success_prob(z: f64) -> f64 {
    SUCCESS_EPS + (1.0 - 2.0 * SUCCESS_EPS) / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(SUCCESS_EPS, 1.0 - SUCCESS_EPS);
    (p / (1.0 - p)).ln()
}

fn lognormal_around(rng: &mut impl Rng, mean: f64, sigma: f64) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    mean * (sigma * n - 0.5 * sigma * sigma).exp()
}

#[derive(Debug, Clone)]
pub struct SimBackend {
    config: SimConfig,
    name: String,
    feature_slope: Vec<f64>,
    feature_offset: Vec<f64>,
    distractor_weights: WeightedIndex<f64>,
}

impl SimBackend {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut map_rng = Stream::new(config.seed).label("feature_map").rng();
        let feature_slope = (0..config.signal_dims)
            .map(|_| map_rng.random_range(0.5..1.5))
            .collect();
        let feature_offset = (0..config.signal_dims)
            .map(|_| map_rng.random_range(-1.0..1.0))
            .collect();
        let weights: Vec<f64> = (0..config.distractor_count)
            .map(|j| 1.0 / ((j + 1) as f64).powf(config.distractor_zipf))
            .collect();
        let distractor_weights = WeightedIndex::new(weights)
            .map_err(|e| Error::config(format!("sim: distractor weights: {e}")))?;
        Ok(SimBackend {
            config,
            name: "sim".into(),
            feature_slope,
            feature_offset,
            distractor_weights,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn stream(&self, stage: &str) -> Stream {
        Stream::new(self.config.seed).label(stage)
    }

    /// Deterministic under `(seed, index)`: query `i` does not depend on how
    /// many queries are requested.
    pub fn sample_queries(&self, count: usize) -> Vec<QueryRecord> {
        let beta = Beta::new(self.config.difficulty_alpha, self.config.difficulty_beta)
            .expect("validated beta parameters");
        (0..count)
            .map(|i| {
                let mut rng = self.stream("query").index(i as u64).rng();
                let p: f64 = beta.sample(&mut rng);
                let len = lognormal_around(&mut rng, self.config.length_mean, self.config.length_sigma);
                let gold = rng.random_range(0..ANSWER_SPACE);
                QueryRecord {
                    query_id: format!("q{i:05}"),
                    prompt: format!("synthetic problem {i}"),
                    gold_answer: gold.to_string(),
                    base_success_prob: Some(p),
                    task_length_ref: (len.round() as u64).max(1),
                }
            })
            .collect()
    }

    fn latent(&self, query: &QueryRecord, path_id: u32) -> Result<(LatentPath, f64)> {
        let p = query.base_success_prob.ok_or_else(|| {
            Error::invalid(format!(
                "query {} has no base_success_prob; the simulator needs it",
                query.query_id
            ))
        })?;
        let mut rng = self
            .stream("latent")
            .label(&query.query_id)
            .index(u64::from(path_id))
            .rng();
        let n: f64 = StandardNormal.sample(&mut rng);
        let z = logit(p) + self.config.path_quality_sigma * n;
        let total = lognormal_around(
            &mut rng,
            query.task_length_ref as f64,
            self.config.path_length_sigma,
        );
        let conf_noise: f64 = StandardNormal.sample(&mut rng);
        Ok((
            LatentPath {
                quality: z,
                true_success_prob: success_prob(z),
                total_length: (total.round() as u64).max(1),
            },
            conf_noise,
        ))
    }

    fn distractor(&self, query: &QueryRecord, rng: &mut impl Rng) -> String {
        let gold: u32 = query.gold_answer.trim().parse().unwrap_or(0);
        let j = self.distractor_weights.sample(rng) as u32;
        ((gold + 1 + j) % ANSWER_SPACE).to_string()
    }

    fn emit_tokens(
        &self,
        stream: Stream,
        query: &QueryRecord,
        count: usize,
        mean_nll: f64,
        tokens: &mut Vec<u32>,
        logprobs: &mut Vec<f64>,
    ) {
        let vocab = self.config.vocab_size;
        let topic = (crate::rng::token_id(&query.query_id)) % vocab;
        let mut rng = stream.rng();
        tokens.reserve(count);
        logprobs.reserve(count);
        for _ in 0..count {
            let t = if rng.random::<bool>() {
                (topic + rng.random_range(0..64u32)) % vocab
            } else {
                rng.random_range(0..vocab)
            };
            let e: f64 = Exp1.sample(&mut rng);
            tokens.push(t);
            logprobs.push(-mean_nll * e);
        }
    }

    /// Launches path `path_id` and stops at `prefix_len` tokens, or earlier if
    /// the trajectory ends first.
    pub fn launch(&self, query: &QueryRecord, path_id: u32, prefix_len: usize) -> Result<PathRecord> {
        if prefix_len == 0 {
            return Err(Error::invalid("prefix length must be >= 1"));
        }
        let (latent, conf_noise) = self.latent(query, path_id)?;
        let z = latent.quality;
        let available = latent.total_length.min(prefix_len as u64) as usize;
        let early_finish = (latent.total_length as usize) < prefix_len;

        let m = self.config.confidence_miscalibration;
        let confidence_latent = (1.0 - m) * z + m * conf_noise * LOGISTIC_SD;
        let mean_nll = (1.0 - 0.12 * confidence_latent).max(0.05);

        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        self.emit_tokens(
            self.stream("tokens").label(&query.query_id).index(u64::from(path_id)),
            query,
            available,
            mean_nll,
            &mut tokens,
            &mut logprobs,
        );

        let features = self.features(query, path_id, z, available);

        Ok(PathRecord {
            query_id: query.query_id.clone(),
            path_id,
            tokens,
            token_logprobs: logprobs,
            text: String::new(),
            checkpoint_features: Some(features),
            status: PathStatus::Launched,
            answer: None,
            is_correct: None,
            prefix_tokens: available as u64,
            completion_tokens: 0,
            reencode_tokens: 0,
            early_finish,
            latent: Some(latent),
        })
    }

    fn features(&self, query: &QueryRecord, path_id: u32, z: f64, observed: usize) -> Vec<f64> {
        let cfg = &self.config;
        let sigma = cfg.feature_noise
            * (cfg.feature_reference_prefix as f64 / observed.max(1) as f64).sqrt();
        let mut qrng = self.stream("query_features").label(&query.query_id).rng();
        let mut rng = self
            .stream("features")
            .label(&query.query_id)
            .index(u64::from(path_id))
            .rng();
        (0..cfg.feature_dim)
            .map(|j| {
                let n: f64 = StandardNormal.sample(&mut rng);
                let shared: f64 = StandardNormal.sample(&mut qrng);
                if j < cfg.signal_dims {
                    self.feature_slope[j] * z + self.feature_offset[j] + sigma * n
                } else {
                    shared + 0.5 * n
                }
            })
            .collect()
    }

    /// Completes a launched path using resume substream `stream_id`. Stream 0
    /// is the path's canonical completion; other streams are alternative
    /// continuations of the same prefix.
    pub fn resume_with_stream(
        &self,
        query: &QueryRecord,
        mut path: PathRecord,
        stream_id: u64,
    ) -> Result<PathRecord> {
        let outcome = self.continuation(query, &path, stream_id)?;
        if self.config.materialize_completions && outcome.completion_tokens > 0 {
            let latent = path.latent.expect("checked by continuation");
            let m = self.config.confidence_miscalibration;
            let mean_nll = (1.0 - 0.12 * (1.0 - m) * latent.quality).max(0.05);
            let mut tokens = std::mem::take(&mut path.tokens);
            let mut logprobs = std::mem::take(&mut path.token_logprobs);
            self.emit_tokens(
                self.stream("completion")
                    .label(&query.query_id)
                    .index(u64::from(path.path_id))
                    .index(stream_id),
                query,
                outcome.completion_tokens as usize,
                mean_nll,
                &mut tokens,
                &mut logprobs,
            );
            path.tokens = tokens;
            path.token_logprobs = logprobs;
        }
        path.status = PathStatus::Completed;
        path.completion_tokens = outcome.completion_tokens;
        path.is_correct = Some(outcome.correct);
        path.answer = Some(outcome.answer);
        Ok(path)
    }

    fn continuation(&self, query: &QueryRecord, path: &PathRecord, stream_id: u64) -> Result<RolloutOutcome> {
        path.expect_status(PathStatus::Launched)?;
        if path.query_id != query.query_id {
            return Err(Error::invalid(format!(
                "path belongs to {}, not {}",
                path.query_id, query.query_id
            )));
        }
        let latent = path.latent.ok_or_else(|| {
            Error::invalid("simulator can only resume paths it launched (latent state missing)")
        })?;
        let mut rng = self
            .stream("resume")
            .label(&query.query_id)
            .index(u64::from(path.path_id))
            .index(stream_id)
            .rng();
        let correct = rng.random::<f64>() < latent.true_success_prob;
        let answer = if correct {
            query.gold_answer.clone()
        } else {
            self.distractor(query, &mut rng)
        };
        let completion_tokens = if path.early_finish {
            0
        } else if stream_id == 0 {
            latent.total_length.saturating_sub(path.prefix_tokens)
        } else {
            let total = lognormal_around(
                &mut rng,
                query.task_length_ref as f64,
                self.config.path_length_sigma,
            );
            (total.round() as u64).saturating_sub(path.prefix_tokens)
        };
        Ok(RolloutOutcome {
            correct,
            answer,
            completion_tokens,
        })
    }

    /// Resume substream used by continuation `j` of a rollout batch.
    pub fn rollout_stream(salt: u64, j: usize) -> u64 {
        // never 0: rollouts must not replay the canonical completion
        Stream::new(salt).index(j as u64).seed() | 1
    }

    /// Full trajectory: launch then canonical resume.
    pub fn generate_full(&self, query: &QueryRecord, path_id: u32) -> Result<PathRecord> {
        let mut launched = self.launch(query, path_id, usize::MAX)?;
        launched.early_finish = false;
        self.resume_with_stream(query, launched, 0)
    }
}

impl Backend for SimBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn launch_prefix(&self, query: &QueryRecord, path_id: u32, prefix_len: usize) -> Result<PathRecord> {
        self.launch(query, path_id, prefix_len)
    }

    fn resume_path(&self, query: &QueryRecord, path: PathRecord) -> Result<PathRecord> {
        self.resume_with_stream(query, path, 0)
    }

    fn rollout_from_prefix(
        &self,
        query: &QueryRecord,
        path: &PathRecord,
        k: usize,
        salt: u64,
    ) -> Result<Vec<PathRecord>> {
        if k == 0 {
            return Err(Error::invalid("rollout count K must be >= 1"));
        }
        (0..k)
            .map(|j| self.resume_with_stream(query, path.clone(), Self::rollout_stream(salt, j)))
            .collect()
    }

    fn rollout_outcomes(
        &self,
        query: &QueryRecord,
        path: &PathRecord,
        k: usize,
        salt: u64,
    ) -> Result<Vec<RolloutOutcome>> {
        if k == 0 {
            return Err(Error::invalid("rollout count K must be >= 1"));
        }
        (0..k)
            .map(|j| self.continuation(query, path, Self::rollout_stream(salt, j)))
            .collect()
    }

    fn fork(&self, label: &str) -> Arc<dyn Backend> {
        let mut config = self.config.clone();
        config.seed = derive_seed(config.seed, label);
        let mut forked = SimBackend::new(config).expect("config already validated");
        // features must keep the same meaning across forks
        forked.feature_slope = self.feature_slope.clone();
        forked.feature_offset = self.feature_offset.clone();
        forked.name = format!("{}/{label}", self.name);
        Arc::new(forked)
    }
}
