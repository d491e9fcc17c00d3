//! Pruning-signal generators.
//!
//! A generator maps each launched prefix of a query to a score in [0, 1].
//! Generators are registered by name in a [`SignalRegistry`] and selected at
//! run time from configuration.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{PathRecord, QueryRecord};

/// Default super-token count charged per learned check.
pub const DEFAULT_SUPER_TOKENS: u64 = 6;
/// Default window of the sliding-minimum confidence variant.
pub const DEFAULT_CONFIDENCE_WINDOW: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Heuristic,
    Judge,
    Confidence,
    Learned,
    /// Control: the simulator's true success probability.
    Oracle,
    /// Control: uniform random scores.
    Random,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GeneratorKind::Heuristic => "heuristic",
            GeneratorKind::Judge => "judge",
            GeneratorKind::Confidence => "confidence",
            GeneratorKind::Learned => "learned",
            GeneratorKind::Oracle => "oracle",
            GeneratorKind::Random => "random",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalScore {
    pub path_id: u32,
    pub value: f64,
    pub generator_kind: GeneratorKind,
    pub check_cost_tokens: u64,
}

impl SignalScore {
    fn new(path_id: u32, value: f64, kind: GeneratorKind, cost: u64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{kind} score for path {path_id} is {value}")));
        }
        Ok(SignalScore {
            path_id,
            value: value.clamp(0.0, 1.0),
            generator_kind: kind,
            check_cost_tokens: cost,
        })
    }
}

pub trait SignalGenerator: Send + Sync {
    fn kind(&self) -> GeneratorKind;

    /// Scores every prefix of one query. Results are positional; a failed
    /// entry does not affect the others.
    fn score_batch(&self, query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>>;
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn ngram_set(tokens: &[u32], n: usize) -> HashSet<Vec<u32>> {
    if tokens.len() < n {
        return HashSet::new();
    }
    tokens.windows(n).map(<[u32]>::to_vec).collect()
}

/// Diversity score: one minus the largest Jaccard similarity to any sibling.
pub struct Heuristic {
    pub ngram: usize,
}

impl Heuristic {
    /// Tokens charged for one pairwise similarity pass over a prefix.
    pub fn check_cost(prefix_tokens: u64) -> u64 {
        prefix_tokens.div_ceil(2)
    }
}

impl SignalGenerator for Heuristic {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Heuristic
    }

    fn score_batch(&self, _query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        let sets: Vec<_> = prefixes.iter().map(|p| ngram_set(&p.tokens, self.ngram.max(1))).collect();
        (0..prefixes.len())
            .map(|i| {
                let max_sim = (0..prefixes.len())
                    .filter(|&j| j != i)
                    .map(|j| jaccard(&sets[i], &sets[j]))
                    .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
                let p = &prefixes[i];
                SignalScore::new(
                    p.path_id,
                    1.0 - max_sim.unwrap_or(0.0),
                    GeneratorKind::Heuristic,
                    Self::check_cost(p.prefix_tokens),
                )
            })
            .collect()
    }
}

/// Token-probability confidence.
pub struct Confidence {
    /// `None` scores the geometric-mean token probability; `Some(w)` the
    /// lowest geometric mean over any window of `w` tokens.
    pub window: Option<usize>,
}

impl Confidence {
    pub fn value(&self, logprobs: &[f64]) -> Result<f64> {
        if logprobs.is_empty() {
            return Err(Error::invalid("confidence of an empty prefix"));
        }
        let n = logprobs.len();
        let mean = match self.window {
            Some(w) if w >= 1 && n > w => {
                let mut sum: f64 = logprobs[..w].iter().sum();
                let mut lowest = sum;
                for i in w..n {
                    sum += logprobs[i] - logprobs[i - w];
                    lowest = lowest.min(sum);
                }
                lowest / w as f64
            }
            _ => logprobs.iter().sum::<f64>() / n as f64,
        };
        Ok(mean.min(0.0).exp())
    }
}

impl SignalGenerator for Confidence {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Confidence
    }

    fn score_batch(&self, _query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        prefixes
            .iter()
            .map(|p| SignalScore::new(p.path_id, self.value(&p.token_logprobs)?, GeneratorKind::Confidence, 0))
            .collect()
    }
}

/// An external evaluator of a prefix.
pub trait Judge: Send + Sync {
    fn judge(&self, query: &QueryRecord, prefix: &PathRecord) -> Result<f64>;
}

/// Noisy view of the simulator's latent success probability.
pub struct SimJudge {
    pub noise: f64,
    pub seed: u64,
}

impl Judge for SimJudge {
    fn judge(&self, _query: &QueryRecord, prefix: &PathRecord) -> Result<f64> {
        let latent = prefix
            .latent
            .as_ref()
            .ok_or_else(|| Error::config("simulated judge needs a simulator path"))?;
        let mut v = latent.true_success_prob;
        if self.noise > 0.0 {
            let mut rng = Stream::new(self.seed)
                .label("judge")
                .label(&prefix.query_id)
                .index(u64::from(prefix.path_id))
                .rng();
            v += Normal::new(0.0, self.noise)
                .map_err(|e| Error::config(format!("judge noise: {e}")))?
                .sample(&mut rng);
        }
        Ok(v)
    }
}

pub struct JudgeSignal {
    pub judge: Arc<dyn Judge>,
}

impl SignalGenerator for JudgeSignal {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Judge
    }

    fn score_batch(&self, query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        prefixes
            .iter()
            .map(|p| {
                let v = self.judge.judge(query, p)?;
                // A separate model re-encodes the whole prefix.
                SignalScore::new(p.path_id, v, GeneratorKind::Judge, p.prefix_tokens)
            })
            .collect()
    }
}

pub const SCORER_FORMAT: &str = "pathprune-scorer";
pub const SCORER_VERSION: u32 = 1;

/// Learned scorer: optional tanh adapter followed by a logistic head, over
/// standardized checkpoint features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub hidden: usize,
    pub use_adapter: bool,
    /// Per-feature centering applied before the forward pass.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Adapter weights, `feature_dim x hidden`, row-major. Empty without adapter.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Head weights over the adapter output, or over the features directly.
    pub w2: Vec<f64>,
    pub b2: f64,
    /// Checkpoint length of the training prefixes, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_length: Option<usize>,
}

/// Intermediate values of one forward pass.
pub struct Forward {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
}

impl ScorerModel {
    pub fn zeros(feature_dim: usize, hidden: usize, use_adapter: bool) -> Self {
        let head = if use_adapter { hidden } else { feature_dim };
        ScorerModel {
            format: SCORER_FORMAT.into(),
            version: SCORER_VERSION,
            feature_dim,
            hidden: if use_adapter { hidden } else { 0 },
            use_adapter,
            feature_mean: vec![0.0; feature_dim],
            feature_scale: vec![1.0; feature_dim],
            w1: vec![0.0; if use_adapter { feature_dim * hidden } else { 0 }],
            b1: vec![0.0; if use_adapter { hidden } else { 0 }],
            w2: vec![0.0; head],
            b2: 0.0,
            prefix_length: None,
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, use_adapter: bool, rng: &mut R) -> Self {
        let mut m = Self::zeros(feature_dim, hidden, use_adapter);
        let draw = |fan_in: usize, w: &mut [f64], rng: &mut R| {
            let r = 1.0 / (fan_in.max(1) as f64).sqrt();
            for x in w {
                *x = rng.random_range(-r..=r);
            }
        };
        draw(feature_dim, &mut m.w1, rng);
        let head_fan_in = m.w2.len();
        draw(head_fan_in, &mut m.w2, rng);
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SCORER_FORMAT || self.version != SCORER_VERSION {
            return Err(Error::config(format!(
                "unsupported scorer document {} v{}",
                self.format, self.version
            )));
        }
        let f = self.feature_dim;
        let (w1, b1, w2) = if self.use_adapter {
            (f * self.hidden, self.hidden, self.hidden)
        } else {
            (0, 0, f)
        };
        if self.w1.len() != w1
            || self.b1.len() != b1
            || self.w2.len() != w2
            || self.feature_mean.len() != f
            || self.feature_scale.len() != f
        {
            return Err(Error::config("scorer parameter shapes do not match its dimensions"));
        }
        if self.params().iter().chain(&self.feature_mean).chain(&self.feature_scale).any(|x| !x.is_finite())
            || self.feature_scale.iter().any(|&s| s <= 0.0)
        {
            return Err(Error::config("scorer parameters must be finite with positive scales"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Trainable parameters flattened as w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward> {
        if features.len() != self.feature_dim {
            return Err(Error::config(format!(
                "scorer expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        let input: Vec<f64> = features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        let hidden = if self.use_adapter {
            let h = self.hidden;
            let mut pre = self.b1.clone();
            for (f, x) in input.iter().enumerate() {
                let row = &self.w1[f * h..(f + 1) * h];
                for (p, w) in pre.iter_mut().zip(row) {
                    *p += x * w;
                }
            }
            pre.into_iter().map(f64::tanh).collect()
        } else {
            Vec::new()
        };
        let head_in = if self.use_adapter { &hidden } else { &input };
        let logit = self.b2 + head_in.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>();
        Ok(Forward { input, hidden, logit })
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        Ok(self.forward(features)?.logit)
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(logistic(self.logit(features)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                    hint: "train a scorer first".into(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        let m: ScorerModel = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            source,
        })?;
        m.validate()?;
        Ok(m)
    }
}

pub struct Learned {
    pub model: Arc<ScorerModel>,
    pub super_tokens: u64,
}

impl SignalGenerator for Learned {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Learned
    }

    fn score_batch(&self, _query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        prefixes
            .iter()
            .map(|p| {
                let features = p.checkpoint_features.as_deref().ok_or_else(|| {
                    Error::invalid(format!("path {}/{} has no checkpoint features", p.query_id, p.path_id))
                })?;
                SignalScore::new(p.path_id, self.model.predict(features)?, GeneratorKind::Learned, self.super_tokens)
            })
            .collect()
    }
}

pub struct Oracle;

impl SignalGenerator for Oracle {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Oracle
    }

    fn score_batch(&self, _query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        prefixes
            .iter()
            .map(|p| {
                let q = p
                    .latent
                    .as_ref()
                    .ok_or_else(|| Error::config("oracle signal needs a simulator path"))?
                    .true_success_prob;
                SignalScore::new(p.path_id, q, GeneratorKind::Oracle, 0)
            })
            .collect()
    }
}

pub struct RandomSignal {
    pub seed: u64,
}

impl SignalGenerator for RandomSignal {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Random
    }

    fn score_batch(&self, _query: &QueryRecord, prefixes: &[PathRecord]) -> Vec<Result<SignalScore>> {
        prefixes
            .iter()
            .map(|p| {
                let mut rng = Stream::new(self.seed)
                    .label("random_signal")
                    .label(&p.query_id)
                    .index(u64::from(p.path_id))
                    .rng();
                SignalScore::new(p.path_id, rng.random::<f64>(), GeneratorKind::Random, 0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Registry name.
    pub kind: String,
    /// Heuristic n-gram width.
    pub ngram: usize,
    /// Confidence: use the sliding-window minimum instead of the plain mean.
    pub sliding_window: bool,
    pub window: usize,
    /// Learned: tokens charged per check.
    pub super_tokens: u64,
    /// Learned: scorer document to load when none is supplied in the context.
    pub model_path: Option<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: "learned".into(),
            ngram: 1,
            sliding_window: false,
            window: DEFAULT_CONFIDENCE_WINDOW,
            super_tokens: DEFAULT_SUPER_TOKENS,
            model_path: None,
        }
    }
}

impl GeneratorConfig {
    pub fn named(kind: &str) -> Self {
        GeneratorConfig {
            kind: kind.into(),
            ..Self::default()
        }
    }
}

/// Resources a generator may need at construction.
#[derive(Clone, Default)]
pub struct SignalContext {
    pub seed: u64,
    pub model: Option<Arc<ScorerModel>>,
    pub judge: Option<Arc<dyn Judge>>,
}

pub type GeneratorFactory =
    Box<dyn Fn(&GeneratorConfig, &SignalContext) -> Result<Arc<dyn SignalGenerator>> + Send + Sync>;

pub struct SignalRegistry {
    factories: BTreeMap<String, GeneratorFactory>,
}

impl SignalRegistry {
    pub fn empty() -> Self {
        SignalRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: GeneratorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, config: &GeneratorConfig, ctx: &SignalContext) -> Result<Arc<dyn SignalGenerator>> {
        let factory = self.factories.get(&config.kind).ok_or_else(|| {
            Error::config(format!(
                "unknown signal generator `{}` (known: {})",
                config.kind,
                self.names().join(", ")
            ))
        })?;
        factory(config, ctx)
    }
}

impl Default for SignalRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(
            "heuristic",
            Box::new(|c, _| {
                if c.ngram == 0 {
                    return Err(Error::config("signal.ngram must be >= 1"));
                }
                Ok(Arc::new(Heuristic { ngram: c.ngram }))
            }),
        );
        r.register(
            "confidence",
            Box::new(|c, _| {
                if c.sliding_window && c.window == 0 {
                    return Err(Error::config("signal.window must be >= 1"));
                }
                Ok(Arc::new(Confidence {
                    window: c.sliding_window.then_some(c.window),
                }))
            }),
        );
        r.register(
            "judge",
            Box::new(|_, ctx| {
                let judge = ctx.judge.clone().ok_or_else(|| Error::config("judge signal needs a judge"))?;
                Ok(Arc::new(JudgeSignal { judge }))
            }),
        );
        r.register(
            "learned",
            Box::new(|c, ctx| {
                let model = match (&ctx.model, &c.model_path) {
                    (Some(m), _) => m.clone(),
                    (None, Some(p)) => Arc::new(ScorerModel::load(Path::new(p))?),
                    (None, None) => return Err(Error::config("learned signal needs a scorer model")),
                };
                Ok(Arc::new(Learned {
                    model,
                    super_tokens: c.super_tokens,
                }))
            }),
        );
        r.register("oracle", Box::new(|_, _| Ok(Arc::new(Oracle))));
        r.register("random", Box::new(|_, ctx| Ok(Arc::new(RandomSignal { seed: ctx.seed }))));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LatentPath, PathStatus};
    use proptest::prelude::*;

    fn query() -> QueryRecord {
        QueryRecord {
            query_id: "q".into(),
            prompt: String::new(),
            gold_answer: "1".into(),
            base_success_prob: None,
            task_length_ref: 100,
        }
    }

    fn path(id: u32, tokens: Vec<u32>, lps: Vec<f64>) -> PathRecord {
        PathRecord {
            query_id: "q".into(),
            path_id: id,
            prefix_tokens: tokens.len() as u64,
            tokens,
            token_logprobs: lps,
            text: String::new(),
            checkpoint_features: None,
            status: PathStatus::Launched,
            answer: None,
            is_correct: None,
            completion_tokens: 0,
            reencode_tokens: 0,
            early_finish: false,
            latent: None,
        }
    }

    fn values(g: &dyn SignalGenerator, ps: &[PathRecord]) -> Vec<f64> {
        g.score_batch(&query(), ps).into_iter().map(|s| s.unwrap().value).collect()
    }

    #[test]
    fn heuristic_examples() {
        let h = Heuristic { ngram: 1 };
        let same = [path(1, vec![1, 2], vec![0.0; 2]), path(2, vec![2, 1], vec![0.0; 2])];
        assert_eq!(values(&h, &same), vec![0.0, 0.0]);
        let disjoint = [path(1, vec![1, 2], vec![0.0; 2]), path(2, vec![3, 4], vec![0.0; 2])];
        assert_eq!(values(&h, &disjoint), vec![1.0, 1.0]);
        let overlap = [path(1, vec![1, 2, 3], vec![0.0; 3]), path(2, vec![2, 3, 4], vec![0.0; 3])];
        assert_eq!(values(&h, &overlap), vec![0.5, 0.5]);
        assert_eq!(values(&h, &overlap[..1]), vec![1.0]);
    }

    #[test]
    fn heuristic_bigrams() {
        let h = Heuristic { ngram: 2 };
        // bigrams {12,23} vs {21,12}: one shared of three
        let ps = [path(1, vec![1, 2, 3], vec![0.0; 3]), path(2, vec![2, 1, 2], vec![0.0; 3])];
        let v = values(&h, &ps);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        let c = Confidence { window: None };
        assert_eq!(c.value(&[0.0, 0.0]).unwrap(), 1.0);
        assert!((c.value(&[-1.0; 5]).unwrap() - 0.367_879_441).abs() < 1e-9);
        assert!((c.value(&[-1.0, -3.0]).unwrap() - 0.135_335_283).abs() < 1e-9);
        assert!(matches!(c.value(&[]), Err(Error::InvalidArgument(_))));

        let w = Confidence { window: Some(2) };
        // windows: [-0.1,-0.1] [-0.1,-3] [-3,-0.1] -> lowest mean -1.55
        assert!((w.value(&[-0.1, -0.1, -3.0, -0.1]).unwrap() - (-1.55f64).exp()).abs() < 1e-12);
        assert_eq!(w.value(&[-2.0]).unwrap(), (-2.0f64).exp());
    }

    fn latent_path(id: u32, q: f64) -> PathRecord {
        let mut p = path(id, vec![1; 2048], vec![-0.5; 2048]);
        p.latent = Some(LatentPath {
            quality: (q / (1.0 - q)).ln(),
            true_success_prob: q,
            total_length: 5000,
        });
        p
    }

    #[test]
    fn judge_clamps_and_charges_prefix() {
        struct Fixed(f64);
        impl Judge for Fixed {
            fn judge(&self, _: &QueryRecord, _: &PathRecord) -> Result<f64> {
                Ok(self.0)
            }
        }
        let g = JudgeSignal { judge: Arc::new(Fixed(1.7)) };
        let s = g.score_batch(&query(), &[latent_path(1, 0.5)]).remove(0).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.check_cost_tokens, 2048);
    }

    #[test]
    fn noiseless_sim_judge_follows_latent_order() {
        let g = JudgeSignal {
            judge: Arc::new(SimJudge { noise: 0.0, seed: 1 }),
        };
        let qs = [0.9, 0.1, 0.5, 0.7, 0.3];
        let ps: Vec<_> = qs.iter().enumerate().map(|(i, &q)| latent_path(i as u32 + 1, q)).collect();
        let v = values(&g, &ps);
        let mut by_score: Vec<usize> = (0..5).collect();
        by_score.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut by_z: Vec<usize> = (0..5).collect();
        by_z.sort_by(|&a, &b| {
            let za = ps[a].latent.as_ref().unwrap().quality;
            let zb = ps[b].latent.as_ref().unwrap().quality;
            za.total_cmp(&zb)
        });
        assert_eq!(by_score, by_z);
    }

    #[test]
    fn learned_examples() {
        let mut p = path(1, vec![1; 10], vec![-0.1; 10]);
        p.checkpoint_features = Some(vec![0.3, -1.2, 2.0]);
        let zero = Learned {
            model: Arc::new(ScorerModel::zeros(3, 4, true)),
            super_tokens: DEFAULT_SUPER_TOKENS,
        };
        let s = zero.score_batch(&query(), std::slice::from_ref(&p)).remove(0).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(s.check_cost_tokens, 6);

        let mut linear = ScorerModel::zeros(3, 0, false);
        linear.set_params(&[0.5, -0.25, 1.0, 0.1]);
        let direct = 0.1 + 0.5 * 0.3 + 0.25 * 1.2 + 2.0;
        assert!((linear.logit(&[0.3, -1.2, 2.0]).unwrap() - direct).abs() < 1e-12);

        let wrong = ScorerModel::zeros(4, 4, true);
        assert!(matches!(wrong.logit(&[0.0; 3]), Err(Error::Config(_))));
    }

    #[test]
    fn adapter_forward_by_hand() {
        let mut m = ScorerModel::zeros(2, 2, true);
        // w1 rows per feature, then b1, w2, b2
        m.set_params(&[1.0, 0.0, 0.0, 2.0, 0.1, -0.1, 1.5, -0.5, 0.2]);
        let x = [0.4, -0.3];
        let h0 = (0.4 + 0.1f64).tanh();
        let h1 = (2.0 * -0.3 - 0.1f64).tanh();
        let expect = 0.2 + 1.5 * h0 - 0.5 * h1;
        assert!((m.logit(&x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn scorer_roundtrip_is_exact() {
        let mut rng = Stream::new(3).rng();
        let mut m = ScorerModel::init(5, 7, true, &mut rng);
        m.feature_mean = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        m.feature_scale = vec![1.5; 5];
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("m.json");
        m.save(&f).unwrap();
        assert_eq!(ScorerModel::load(&f).unwrap(), m);
        assert!(matches!(
            ScorerModel::load(&dir.path().join("none.json")),
            Err(Error::MissingArtifact { .. })
        ));
    }

    #[test]
    fn cost_ordering() {
        let mut ps = [latent_path(1, 0.5), latent_path(2, 0.4)];
        for p in &mut ps {
            p.checkpoint_features = Some(Vec::new());
        }
        let cost = |g: &dyn SignalGenerator| g.score_batch(&query(), &ps)[0].as_ref().unwrap().check_cost_tokens;
        let judge = cost(&JudgeSignal {
            judge: Arc::new(SimJudge { noise: 0.1, seed: 0 }),
        });
        let heur = cost(&Heuristic { ngram: 1 });
        let learned = cost(&Learned {
            model: Arc::new(ScorerModel::zeros(0, 1, false)),
            super_tokens: DEFAULT_SUPER_TOKENS,
        });
        assert!(judge > heur && heur > learned, "{judge} {heur} {learned}");
    }

    #[test]
    fn registry_resolves_names() {
        let r = SignalRegistry::default();
        assert_eq!(r.names(), vec!["confidence", "heuristic", "judge", "learned", "oracle", "random"]);
        let ctx = SignalContext::default();
        assert_eq!(r.build(&GeneratorConfig::named("oracle"), &ctx).unwrap().kind(), GeneratorKind::Oracle);
        assert!(matches!(r.build(&GeneratorConfig::named("learned"), &ctx), Err(Error::Config(_))));
        assert!(matches!(r.build(&GeneratorConfig::named("judge"), &ctx), Err(Error::Config(_))));
        assert!(matches!(r.build(&GeneratorConfig::named("nope"), &ctx), Err(Error::Config(_))));
    }

    #[test]
    fn random_signal_is_pure() {
        let g = RandomSignal { seed: 9 };
        let ps = [latent_path(1, 0.5), latent_path(2, 0.5)];
        assert_eq!(values(&g, &ps), values(&g, &ps));
        assert_ne!(values(&g, &ps)[0], values(&g, &ps)[1]);
    }

    proptest! {
        #[test]
        fn every_generator_stays_in_unit_interval(
            toks in prop::collection::vec(prop::collection::vec(0u32..20, 1..30), 1..6),
            lp in prop::collection::vec(-50.0f64..=0.0, 1..30),
            feats in prop::collection::vec(-1e3f64..1e3, 4),
            q in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let ps: Vec<PathRecord> = toks.iter().enumerate().map(|(i, t)| {
                let mut p = latent_path(i as u32 + 1, q.clamp(1e-3, 1.0 - 1e-3));
                p.tokens = t.clone();
                p.token_logprobs = lp.iter().cycle().take(t.len()).copied().collect();
                p.checkpoint_features = Some(feats.clone());
                p
            }).collect();
            let mut rng = Stream::new(seed).rng();
            let gens: Vec<Box<dyn SignalGenerator>> = vec![
                Box::new(Heuristic { ngram: 1 }),
                Box::new(Heuristic { ngram: 3 }),
                Box::new(Confidence { window: None }),
                Box::new(Confidence { window: Some(4) }),
                Box::new(JudgeSignal { judge: Arc::new(SimJudge { noise: 0.5, seed }) }),
                Box::new(Learned { model: Arc::new(ScorerModel::init(4, 3, true, &mut rng)), super_tokens: 6 }),
                Box::new(Oracle),
                Box::new(RandomSignal { seed }),
            ];
            for g in &gens {
                let a = values(g.as_ref(), &ps);
                prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)), "{}: {:?}", g.kind(), a);
                prop_assert_eq!(&a, &values(g.as_ref(), &ps));
            }
        }
    }
}
