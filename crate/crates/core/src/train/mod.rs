//! Training: the observation loss, input gating schedules and the
//! mini-batch Adam loop with validation-based checkpoint selection.

mod gating;
mod loss;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gating::{bernoulli_gating, draw_flags, exponential_gap_gating, schedule_p, ScheduleSpec};
pub use loss::{njode_loss, njode_loss_on_tape};

use crate::data::{DatasetBundle, ObservationSet, PathSample};
use crate::error::{Error, Result};
use crate::eval::EvalGating;
use crate::grad::{adam_step, AdamHyper, AdamState, Tape};
use crate::model::{forward_on_tape, forward_path, BoundModel, ModelConfig, ModelParams};
use crate::seed;

pub const DEFAULT_BATCH_SIZE: usize = 100;

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub schedule: ScheduleSpec,
    /// Stop after this many epochs without a new best validation loss.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Input flags used for the validation loss.
    pub val_gating: EvalGating,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64, schedule: ScheduleSpec, val_gating: EvalGating) -> Self {
        Self {
            epochs,
            batch_size: default_batch_size(),
            seed,
            schedule,
            patience: None,
            adam: AdamHyper::default(),
            val_gating,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.schedule.validate()?;
        self.val_gating.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Input probability; absent for the exponential-gap schedule.
    pub p: Option<f64>,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
    /// Values returned by the per-epoch evaluation hook.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Minimum validation loss, or training loss without a validation split.
    pub best_loss: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Writes `report.json` and `epochs.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("epochs.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        let keys: Vec<&String> = self.epochs.first().map(|r| r.metrics.keys().collect()).unwrap_or_default();
        let mut header = vec!["epoch", "p", "train_loss", "val_loss", "seconds"];
        header.extend(keys.iter().map(|k| k.as_str()));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let mut row = vec![
                r.epoch.to_string(),
                opt(r.p),
                r.train_loss.to_string(),
                opt(r.val_loss),
                r.seconds.to_string(),
            ];
            row.extend(keys.iter().map(|k| opt(r.metrics.get(*k).copied())));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json = dir.join("report.json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-epoch values of a hook metric.
    pub fn metric(&self, name: &str) -> Vec<f64> {
        self.epochs.iter().filter_map(|r| r.metrics.get(name).copied()).collect()
    }
}

/// Loss and parameter gradient of one path.
pub fn path_loss_and_grad(params: &ModelParams, path: &PathSample, obs: &ObservationSet) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let model = BoundModel::bind(params, &mut tape);
    let series = forward_on_tape(&mut tape, &model, path, obs, false)?;
    let loss = njode_loss_on_tape(&mut tape, &series, path, obs)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss)[0], grads.flatten(&tape, &model.vars())))
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
pub fn batch_loss_and_grad(params: &ModelParams, items: &[(&PathSample, ObservationSet)]) -> Result<(f64, Vec<f64>)> {
    let results: Vec<Result<(f64, Vec<f64>)>> = items
        .par_iter()
        .map(|(path, obs)| path_loss_and_grad(params, path, obs))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for r in results {
        let (l, g) = r?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / items.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Seeded permutation of the training indices for one epoch.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = seed::rng_for(seed, &[seed::stream::SHUFFLE, epoch as u64]);
    order.shuffle(&mut rng);
    order
}

/// Gating seed of one path in one epoch.
pub fn gating_seed(seed: u64, epoch: usize, path: usize) -> u64 {
    seed::derive_seed(seed, &[seed::stream::GATING, epoch as u64, path as u64])
}

/// Mean observation loss over `indices` with the given input convention.
pub fn mean_loss(params: &ModelParams, data: &DatasetBundle, indices: &[usize], gating: &EvalGating) -> Result<f64> {
    let losses: Vec<Result<f64>> = indices
        .par_iter()
        .map(|&i| {
            let path = &data.paths[i];
            let obs = gating.apply(path, &data.observations[i])?;
            njode_loss(&forward_path(params, path, &obs)?, path, &obs)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Called after every epoch with the epoch index and current parameters;
/// the returned values are stored in the epoch record.
pub type EpochHook<'a> = dyn FnMut(usize, &ModelParams) -> Result<BTreeMap<String, f64>> + 'a;

pub fn train_model(data: &DatasetBundle, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    train_model_with_hook(data, model_cfg, cfg, &mut |_, _| Ok(BTreeMap::new()))
}

pub fn train_model_with_hook(
    data: &DatasetBundle,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if model_cfg.d != data.dim() {
        return Err(Error::Config(format!(
            "model dimension {} does not match dataset dimension {}",
            model_cfg.d,
            data.dim()
        )));
    }
    let split = data.split().clone();
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut params = ModelParams::init(model_cfg, cfg.seed)?;
    let mut theta = params.to_flat();
    let mut adam = AdamState::new(theta.len(), cfg.adam);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let p = match cfg.schedule {
            ScheduleSpec::ExponentialGap { .. } => None,
            ref s => Some(schedule_p(epoch, s)?),
        };
        let order = epoch_order(&split.train, cfg.seed, epoch);
        let mut train_total = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items = batch
                .iter()
                .map(|&i| {
                    let obs = &data.observations[i];
                    let times: Vec<f64> = obs.obs_indices.iter().map(|&g| data.paths[i].times[g]).collect();
                    let flags = draw_flags(&cfg.schedule, epoch, &times, gating_seed(cfg.seed, epoch, i))?;
                    Ok((&data.paths[i], obs.with_flags(flags)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grad) = batch_loss_and_grad(&params, &items).map_err(|e| Error::Training {
                epoch,
                batch: batch_no,
                message: e.to_string(),
            })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_no,
                    message: format!("loss is {loss}"),
                });
            }
            train_total += loss * batch.len() as f64;
            adam_step(&mut theta, &grad, &mut adam).map_err(|e| Error::Training {
                epoch,
                batch: batch_no,
                message: e.to_string(),
            })?;
            params.set_flat(&theta)?;
        }
        let train_loss = train_total / order.len() as f64;
        let val_loss = if split.val.is_empty() {
            None
        } else {
            Some(mean_loss(&params, data, &split.val, &cfg.val_gating)?)
        };
        let metrics = hook(epoch, &params)?;
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((epoch, score, params.clone()));
        }
        records.push(EpochRecord {
            epoch,
            p,
            train_loss,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
            metrics,
        });
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if cfg.patience.is_some_and(|pat| epoch - best_epoch >= pat) {
            break;
        }
    }
    let (best_epoch, best_loss, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainReport {
            epochs: records,
            best_epoch,
            best_loss,
            checkpoint: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig, GbmVariant};
    use crate::grad::finite_diff_check;

    fn small_model(d: usize, of: bool, rec: bool, sig: usize) -> ModelConfig {
        ModelConfig {
            d,
            latent_dim: 6,
            hidden: vec![8],
            use_output_feedback: of,
            use_recurrent_jump: rec,
            signature_level: sig,
            ode_substeps: 1,
        }
    }

    fn tiny_gbm(n: usize, seed: u64) -> DatasetBundle {
        generate_dataset(&DatasetConfig::gbm(GbmVariant::HighFreq, n, seed)).unwrap()
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let data = tiny_gbm(3, 5);
        for (of, rec, sig, p) in [(true, true, 2, 0.5), (false, false, 0, 0.0), (true, false, 1, 1.0)] {
            let cfg = small_model(1, of, rec, sig);
            let base = ModelParams::init(&cfg, 7).unwrap();
            let items: Vec<_> = (0..3)
                .map(|i| {
                    let o = &data.observations[i];
                    (&data.paths[i], o.with_flags(bernoulli_gating(o.len(), p, i as u64)).unwrap())
                })
                .collect();
            let f = |theta: &[f64]| {
                let mut q = base.clone();
                q.set_flat(theta)?;
                batch_loss_and_grad(&q, &items)
            };
            let err = finite_diff_check(f, &base.to_flat(), 1e-4).unwrap();
            assert!(err < 1e-4, "of={of} rec={rec} sig={sig}: {err}");
        }
    }

    #[test]
    fn full_flags_equal_ungated_loss() {
        let data = tiny_gbm(4, 1);
        let p = ModelParams::init(&small_model(1, true, true, 3), 2).unwrap();
        for i in 0..4 {
            let obs = &data.observations[i];
            let gated = obs.with_flags(bernoulli_gating(obs.len(), 1.0, 99)).unwrap();
            let a = path_loss_and_grad(&p, &data.paths[i], obs).unwrap();
            let b = path_loss_and_grad(&p, &data.paths[i], &gated).unwrap();
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let data = tiny_gbm(200, 3);
        let model = small_model(1, true, true, 0);
        let mut cfg = TrainConfig::new(10, 4, ScheduleSpec::LinearDecay { e0: 10.0 }, EvalGating::InitialOnly);
        cfg.batch_size = 20;
        cfg.adam.learning_rate = 5e-3;
        let (pa, ra) = train_model(&data, &model, &cfg).unwrap();
        let (pb, rb) = train_model(&data, &model, &cfg).unwrap();
        assert_eq!(pa, pb);
        for (a, b) in ra.epochs.iter().zip(&rb.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss, b.val_loss);
        }
        assert!(ra.epochs[ra.best_epoch].train_loss < ra.epochs[0].train_loss);
        let min = ra.epochs.iter().filter_map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(ra.best_loss, min);
        let split = data.split();
        assert_eq!(mean_loss(&pa, &data, &split.val, &cfg.val_gating).unwrap(), min);
        assert_eq!(ra.epochs[3].p, Some(0.7));
    }

    #[test]
    fn patience_stops_early() {
        let data = tiny_gbm(30, 3);
        let mut cfg = TrainConfig::new(50, 1, ScheduleSpec::Always, EvalGating::AllInputs);
        cfg.patience = Some(1);
        cfg.adam.learning_rate = 1.0;
        let (_, r) = train_model(&data, &small_model(1, false, true, 0), &cfg).unwrap();
        assert!(r.epochs.len() < 50);
        assert!(r.epochs.len() - 1 - r.best_epoch <= 1);
    }

    #[test]
    fn report_roundtrip() {
        let data = tiny_gbm(20, 3);
        let cfg = TrainConfig::new(2, 1, ScheduleSpec::Never, EvalGating::InitialOnly);
        let mut calls = 0;
        let (_, r) = train_model_with_hook(&data, &small_model(1, false, true, 0), &cfg, &mut |e, _| {
            calls += 1;
            Ok(BTreeMap::from([("metric".to_string(), e as f64)]))
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(r.metric("metric"), vec![0.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path()).unwrap();
        assert_eq!(TrainReport::load(dir.path()).unwrap(), r);
        let csv = fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,p,train_loss,val_loss,seconds,metric"));
    }

    #[test]
    fn mismatched_dimension_is_config_error() {
        let data = tiny_gbm(10, 3);
        let cfg = TrainConfig::new(1, 1, ScheduleSpec::Always, EvalGating::AllInputs);
        assert!(matches!(
            train_model(&data, &small_model(2, false, true, 0), &cfg),
            Err(Error::Config(_))
        ));
    }
}
