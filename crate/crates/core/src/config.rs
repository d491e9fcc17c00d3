//! Experiment configuration: one JSON document plus `key.path=value`
//! overrides. All randomness derives from the global seed through named
//! substreams.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::labeler::LabelConfig;
use crate::llm::{EndpointConfig, HttpBackend, HttpJudge};
use crate::pipeline::{BackendSelector, PlantedSettings, RunSpec, SweepGrid};
use crate::rng::derive_seed;
use crate::scaling::ScalingCoefficients;
use crate::signals::{GeneratorConfig, Judge, SimJudge};
use crate::sim::{SimBackend, SimConfig};
use crate::trainer::TrainConfig;

/// Exactly one of the two must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySource {
    /// Queries drawn from the simulator.
    pub count: usize,
    /// JSONL file of query records; required with an endpoint backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for QuerySource {
    fn default() -> Self {
        QuerySource { count: 200, path: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    /// Coefficients for `tables`; the published fit when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<ScalingCoefficients>,
    /// Use `coefficients.json` from the output directory instead.
    pub use_fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub evaluator: String,
    pub grid: SweepGrid,
    pub query_count: usize,
    pub generator: GeneratorConfig,
    pub planted: PlantedSettings,
    /// Budgets per profile at which the optimal γ is read off.
    pub buckets: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            evaluator: "pipeline".into(),
            grid: SweepGrid::default(),
            query_count: 100,
            generator: GeneratorConfig::named("oracle"),
            planted: PlantedSettings::default(),
            buckets: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub backend: BackendConfig,
    #[serde(default)]
    pub queries: QuerySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub labeler: LabelConfig,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn at(path: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) | Error::InvalidArgument(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{path}: {msg}"))
}

/// Sets `key.path` in a JSON document, creating intermediate objects. The
/// value is parsed as JSON and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut walked = Vec::new();
    for part in key.split('.') {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{}` is not an object", walked.join("."))))?;
        walked.push(part);
        node = obj.entry(part).or_insert(Value::Null);
    }
    *node = value;
    Ok(())
}

impl ExperimentConfig {
    /// Deserializes and validates; errors name the offending key path.
    pub fn from_value(doc: Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.backend.sim, &self.backend.endpoint) {
            (Some(sim), None) => sim.validate().map_err(|e| at("backend.sim", e))?,
            (None, Some(ep)) => {
                ep.validate().map_err(|e| at("backend.endpoint", e))?;
                if self.queries.path.is_none() {
                    return Err(Error::config("queries.path: required with an endpoint backend"));
                }
            }
            _ => return Err(Error::config("backend: exactly one of `sim` or `endpoint` must be set")),
        }
        if self.queries.path.is_none() && self.queries.count == 0 {
            return Err(Error::config("queries.count: must be >= 1"));
        }
        if let Some(run) = &self.run {
            run.validate().map_err(|e| at("run", e))?;
            let http = self.backend.endpoint.is_some();
            if (run.backend == BackendSelector::Http) != http {
                return Err(Error::config(format!(
                    "run.backend: `{}` does not match the configured backend block",
                    serde_json::to_value(run.backend)?.as_str().unwrap_or_default()
                )));
            }
        }
        self.labeler.validate().map_err(|e| at("labeler", e))?;
        self.trainer.validate().map_err(|e| at("trainer", e))?;
        if let Some(c) = &self.scaling.coefficients {
            c.validate().map_err(|e| at("scaling.coefficients", e))?;
        }
        self.sweep.grid.validate().map_err(|e| at("sweep.grid", e))?;
        if self.sweep.buckets == 0 {
            return Err(Error::config("sweep.buckets: must be >= 1"));
        }
        Ok(())
    }

    /// Seed of a named substream of the global seed.
    pub fn substream(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    /// Simulator settings seeded from the `backend` substream.
    pub fn sim_config(&self) -> Option<SimConfig> {
        self.backend.sim.clone().map(|s| SimConfig {
            seed: self.substream("backend"),
            ..s
        })
    }

    /// Trainer settings seeded from the `trainer` substream.
    pub fn trainer_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.substream("trainer"),
            ..self.trainer.clone()
        }
    }

    pub fn backend(&self) -> Result<(Arc<dyn Backend>, Arc<dyn Judge>)> {
        if let Some(sim) = self.sim_config() {
            let judge = SimJudge {
                noise: sim.judge_noise,
                seed: self.substream("judge"),
            };
            return Ok((Arc::new(SimBackend::new(sim)?), Arc::new(judge)));
        }
        let ep = self.backend.endpoint.clone().expect("validated");
        let backend = HttpBackend::connect(ep)?;
        Ok((Arc::new(backend.clone()), Arc::new(HttpJudge::new(backend))))
    }
}
