//! Fits a [`ScorerModel`] to Monte-Carlo labels by minimizing soft binary
//! cross-entropy with mini-batch gradient descent.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::LabeledPrefix;
use crate::rng::Stream;
use crate::signals::{logistic, ScorerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub use_adapter: bool,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Fraction of queries held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            epochs: 15,
            hidden: 16,
            use_adapter: true,
            patience: Some(5),
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if self.use_adapter && self.hidden == 0 {
            return Err(Error::config("hidden must be >= 1 with the adapter"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One supervised example: features and a target in [0, 1].
pub type Example<'a> = (&'a [f64], f64);

/// `-[s log σ(l) + (1 - s) log(1 - σ(l))]`, evaluated as `softplus(l) - s l`.
pub fn soft_bce_loss(logit: f64, target: f64) -> Result<f64> {
    if !logit.is_finite() {
        return Err(Error::Numeric(format!("non-finite logit {logit}")));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("target {target} outside [0, 1]")));
    }
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    Ok((softplus - target * logit).max(0.0))
}

/// Mean soft BCE over a batch.
pub fn batch_loss(model: &ScorerModel, batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("loss of an empty batch"));
    }
    let mut sum = 0.0;
    for &(x, s) in batch {
        sum += soft_bce_loss(model.logit(x)?, s)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Gradient of [`batch_loss`] with respect to [`ScorerModel::params`].
pub fn loss_gradient(model: &ScorerModel, batch: &[Example]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("gradient of an empty batch"));
    }
    let (n1, nb1, n2) = (model.w1.len(), model.b1.len(), model.w2.len());
    let h = model.hidden;
    let mut grad = vec![0.0; model.param_count()];
    for &(x, s) in batch {
        let fwd = model.forward(x)?;
        if !fwd.logit.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit {}", fwd.logit)));
        }
        let g = logistic(fwd.logit) - s;
        let (gw1, rest) = grad.split_at_mut(n1);
        let (gb1, rest) = rest.split_at_mut(nb1);
        let (gw2, gb2) = rest.split_at_mut(n2);
        gb2[0] += g;
        if model.use_adapter {
            for j in 0..h {
                gw2[j] += g * fwd.hidden[j];
                let dpre = g * model.w2[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                gb1[j] += dpre;
                for (f, xf) in fwd.input.iter().enumerate() {
                    gw1[f * h + j] += dpre * xf;
                }
            }
        } else {
            for (gw, xf) in gw2.iter_mut().zip(&fwd.input) {
                *gw += g * xf;
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    Ok(grad)
}

/// Fraction of examples where the prediction and the target fall on the same
/// side of 0.5.
pub fn accuracy(model: &ScorerModel, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("accuracy of an empty set"));
    }
    let mut hits = 0usize;
    for &(x, s) in data {
        if (model.logit(x)? > 0.0) == (s > 0.5) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_queries: Vec<String>,
    pub val_queries: Vec<String>,
    pub warnings: Vec<String>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_loss,learning_rate";

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for e in &self.log {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, val, e.learning_rate);
        }
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Splits query ids into (train, validation), holding out `fraction` of the
/// queries (at least one when there are two or more).
pub fn split_queries(ids: &BTreeSet<&str>, fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut all: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    all.shuffle(&mut Stream::new(seed).label("split").rng());
    let n_val = if fraction > 0.0 && all.len() >= 2 {
        ((all.len() as f64 * fraction).round() as usize).clamp(1, all.len() - 1)
    } else {
        0
    };
    let mut val = all.split_off(all.len() - n_val);
    all.sort();
    val.sort();
    (all, val)
}

fn standardize(model: &mut ScorerModel, data: &[Example]) {
    let n = data.len() as f64;
    for f in 0..model.feature_dim {
        let mean = data.iter().map(|(x, _)| x[f]).sum::<f64>() / n;
        let var = data.iter().map(|(x, _)| (x[f] - mean).powi(2)).sum::<f64>() / n;
        model.feature_mean[f] = mean;
        model.feature_scale[f] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
}

/// Trains on `records`; returns the parameters with the lowest validation loss.
/// Input order does not matter: records are put in (query, path) order first.
pub fn train_scorer(records: &[LabeledPrefix], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset("no labeled prefixes to train on"));
    }
    let dim = records[0].features.len();
    if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
        return Err(Error::config(format!(
            "feature dimension mismatch at {}/{}: {} vs {dim}",
            r.query_id,
            r.path_id,
            r.features.len()
        )));
    }
    let mut warnings = Vec::new();
    if records.iter().all(|r| r.s_mc == records[0].s_mc) {
        let w = format!("all {} labels equal {}", records.len(), records[0].s_mc);
        log::warn!("{w}");
        warnings.push(w);
    }

    let mut sorted: Vec<&LabeledPrefix> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.query_id, a.path_id).cmp(&(&b.query_id, b.path_id)));
    let ids: BTreeSet<&str> = sorted.iter().map(|r| r.query_id.as_str()).collect();
    let (train_q, val_q) = split_queries(&ids, config.val_fraction, config.seed);
    let val_set: BTreeSet<&str> = val_q.iter().map(String::as_str).collect();
    let (mut train, mut val): (Vec<Example>, Vec<Example>) = (Vec::new(), Vec::new());
    for r in &sorted {
        let ex = (r.features.as_slice(), r.s_mc);
        if val_set.contains(r.query_id.as_str()) {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }

    let mut model = ScorerModel::init(
        dim,
        config.hidden,
        config.use_adapter,
        &mut Stream::new(config.seed).label("init").rng(),
    );
    standardize(&mut model, &train);

    let val_loss = |m: &ScorerModel| -> Result<Option<f64>> {
        if val.is_empty() {
            Ok(None)
        } else {
            batch_loss(m, &val).map(Some)
        }
    };
    let mut lr = config.learning_rate;
    let mut params = model.params();
    let mut train_loss = batch_loss(&model, &train)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss,
        val_loss: val_loss(&model)?,
        learning_rate: lr,
    }];
    let score = |e: &EpochLog| e.val_loss.unwrap_or(e.train_loss);
    let mut best = (score(&log[0]), 0usize, model.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Example> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut Stream::new(config.seed).label("shuffle").index(epoch as u64).rng());
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let grad = loss_gradient(&model, &batch)?;
            let mut p = model.params();
            for (w, g) in p.iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            model.set_params(&p);
        }
        let new_loss = batch_loss(&model, &train)?;
        if new_loss > train_loss {
            model.set_params(&params);
            lr *= 0.5;
            log::debug!("epoch {epoch}: loss rose to {new_loss}, learning rate now {lr}");
        } else {
            train_loss = new_loss;
            params = model.params();
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss: val_loss(&model)?,
            learning_rate: lr,
        };
        if score(&entry) < best.0 {
            best = (score(&entry), epoch, model.clone());
        }
        log.push(entry);
        if let Some(p) = config.patience {
            if epoch - best.1 >= p {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        log,
        best_epoch: best.1,
        train_queries: train_q,
        val_queries: val_q,
        warnings,
    })
}
