//! Evaluation protocols: grid MSE against deterministic paths, squared
//! distance to the closed-form GBM conditional expectation, long-term
//! prediction with a cutoff, and CSV export of single-path series.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Drift, ObservationSet, PathSample};
use crate::error::{Error, Result};
use crate::model::{forward_path, ModelParams, PredictionSeries};

/// Slack when comparing observation times with a cutoff.
const TIME_EPS: f64 = 1e-9;

/// Which observations are fed to the model at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalGating {
    AllInputs,
    InitialOnly,
    /// Observations at or before `s`.
    Cutoff { s: f64 },
}

impl EvalGating {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EvalGating::Cutoff { s } if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::Config(format!("cutoff {s} must be a finite non-negative time")))
            }
            _ => Ok(()),
        }
    }

    pub fn flags(&self, path: &PathSample, obs: &ObservationSet) -> Vec<bool> {
        obs.obs_indices
            .iter()
            .enumerate()
            .map(|(k, &g)| match *self {
                EvalGating::AllInputs => true,
                EvalGating::InitialOnly => k == 0,
                EvalGating::Cutoff { s } => k == 0 || path.times[g] <= s + TIME_EPS,
            })
            .collect()
    }

    pub fn apply(&self, path: &PathSample, obs: &ObservationSet) -> Result<ObservationSet> {
        self.validate()?;
        obs.with_flags(self.flags(path, obs))
    }
}

/// Scalar metric with its per-path breakdown; `value` is the mean of `per_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub dataset: String,
    pub value: f64,
    pub path_indices: Vec<usize>,
    pub per_path: Vec<f64>,
    pub gating: EvalGating,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl MetricsReport {
    fn from_per_path(metric: &str, data: &DatasetBundle, indices: &[usize], per_path: Vec<f64>, gating: EvalGating) -> Self {
        let value = per_path.iter().sum::<f64>() / per_path.len().max(1) as f64;
        Self {
            metric: metric.to_string(),
            dataset: data.meta.config.generator.kind().to_string(),
            value,
            path_indices: indices.to_vec(),
            per_path,
            gating,
            checkpoint: None,
        }
    }

    /// Writes `<stem>.json` and `<stem>.csv` (columns `path,value`) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["path", "value"])?;
        for (i, v) in self.path_indices.iter().zip(&self.per_path) {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }
}

fn require_nonempty(indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Usage("evaluation over an empty set of paths".into()));
    }
    Ok(())
}

fn mean_sq_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum();
    total / a.len() as f64
}

/// Mean over paths and grid times of `|Y_t - X_t|²` when only the initial
/// value is fed to the model.
pub fn path_mse(params: &ModelParams, data: &DatasetBundle, indices: &[usize]) -> Result<MetricsReport> {
    path_mse_of(data, indices, |path, obs| {
        Ok(forward_path(params, path, obs)?.grid_values)
    })
}

/// [`path_mse`] for an arbitrary predictor of the grid values.
pub fn path_mse_of<F>(data: &DatasetBundle, indices: &[usize], predict: F) -> Result<MetricsReport>
where
    F: Fn(&PathSample, &ObservationSet) -> Result<Vec<Vec<f64>>> + Sync,
{
    require_nonempty(indices)?;
    let gating = EvalGating::InitialOnly;
    let per_path = indices
        .par_iter()
        .map(|&i| {
            let path = &data.paths[i];
            let obs = gating.apply(path, &data.observations[i])?;
            Ok(mean_sq_dist(&predict(path, &obs)?, &path.values))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetricsReport::from_per_path("path_mse", data, indices, per_path, gating))
}

/// `E[X_t | X_τ] = X_τ exp(∫_τ^t μ)` for geometric Brownian motion.
pub fn closed_form_cond_exp(drift: &Drift, x_tau: f64, tau: f64, t: f64) -> Result<f64> {
    if t < tau {
        return Err(Error::Usage(format!("target time {t} precedes conditioning time {tau}")));
    }
    Ok(x_tau * drift.integral(tau, t).exp())
}

/// Closed-form conditional expectation at every grid time given the
/// observations whose input flag is set.
pub fn reference_series(drift: &Drift, path: &PathSample, obs: &ObservationSet) -> Result<Vec<Vec<f64>>> {
    obs.validate(path.len())?;
    let mut out = Vec::with_capacity(path.len());
    let mut last = path.values[0].clone();
    let mut tau = path.times[0];
    let mut k = 0;
    for (i, &t) in path.times.iter().enumerate() {
        if k < obs.len() && obs.obs_indices[k] == i {
            if obs.input_flags[k] {
                for (j, observed) in obs.masks[k].iter().enumerate() {
                    if *observed {
                        last[j] = path.values[i][j];
                    }
                }
                tau = t;
            }
            k += 1;
        }
        out.push(
            last.iter()
                .map(|x| closed_form_cond_exp(drift, *x, tau, t))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

/// Mean over paths and grid times of `|Y_t - X̂_t|²`, where `X̂` is the
/// closed-form conditional expectation given the inputs the model received.
pub fn eval_metric(params: &ModelParams, data: &DatasetBundle, indices: &[usize], gating: EvalGating) -> Result<MetricsReport> {
    eval_metric_of(data, indices, gating, |path, obs| {
        Ok(forward_path(params, path, obs)?.grid_values)
    })
}

/// [`eval_metric`] for an arbitrary predictor of the grid values.
pub fn eval_metric_of<F>(data: &DatasetBundle, indices: &[usize], gating: EvalGating, predict: F) -> Result<MetricsReport>
where
    F: Fn(&PathSample, &ObservationSet) -> Result<Vec<Vec<f64>>> + Sync,
{
    let drift = data.gbm_drift().ok_or_else(|| {
        Error::Unsupported(format!(
            "no closed-form conditional expectation for {} datasets",
            data.meta.config.generator.kind()
        ))
    })?;
    require_nonempty(indices)?;
    let per_path = indices
        .par_iter()
        .map(|&i| {
            let path = &data.paths[i];
            let obs = gating.apply(path, &data.observations[i])?;
            let reference = reference_series(&drift, path, &obs)?;
            Ok(mean_sq_dist(&predict(path, &obs)?, &reference))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetricsReport::from_per_path("eval_metric", data, indices, per_path, gating))
}

/// `sqrt(Σ|Y - X̂|² / Σ|X̂|²)` over the given paths, with the closed-form
/// reference under `gating`.
pub fn relative_rmse(params: &ModelParams, data: &DatasetBundle, indices: &[usize], gating: EvalGating) -> Result<f64> {
    let drift = data
        .gbm_drift()
        .ok_or_else(|| Error::Unsupported("relative RMSE needs a GBM dataset".into()))?;
    require_nonempty(indices)?;
    let parts = indices
        .par_iter()
        .map(|&i| {
            let path = &data.paths[i];
            let obs = gating.apply(path, &data.observations[i])?;
            let reference = reference_series(&drift, path, &obs)?;
            let pred = forward_path(params, path, &obs)?.grid_values;
            let err = mean_sq_dist(&pred, &reference);
            let norm = reference.iter().flatten().map(|x| x * x).sum::<f64>() / reference.len() as f64;
            Ok((err, norm))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (err, norm) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    Ok((err / norm).sqrt())
}

/// Prediction when exactly the observations at or before `s` are inputs.
pub fn long_term_predict(params: &ModelParams, path: &PathSample, obs: &ObservationSet, s: f64) -> Result<PredictionSeries> {
    if !(0.0..=path.horizon() + TIME_EPS).contains(&s) {
        return Err(Error::Usage(format!("cutoff {s} outside [0, {}]", path.horizon())));
    }
    forward_path(params, path, &EvalGating::Cutoff { s }.apply(path, obs)?)
}

/// Columns of an exported single-path series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub times: Vec<f64>,
    pub truth: Vec<Vec<f64>>,
    pub reference: Option<Vec<Vec<f64>>>,
    pub prediction: Vec<Vec<f64>>,
    pub observed: Vec<bool>,
    pub input_used: Vec<bool>,
}

impl SeriesTable {
    pub fn new(
        path: &PathSample,
        obs: &ObservationSet,
        pred: &PredictionSeries,
        reference: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        obs.validate(path.len())?;
        if pred.grid_values.len() != path.len() || reference.as_ref().is_some_and(|r| r.len() != path.len()) {
            return Err(Error::Usage("series lengths do not match the path grid".into()));
        }
        let mut observed = vec![false; path.len()];
        let mut input_used = vec![false; path.len()];
        for (k, &g) in obs.obs_indices.iter().enumerate() {
            observed[g] = true;
            input_used[g] = obs.input_flags[k];
        }
        Ok(Self {
            times: path.times.clone(),
            truth: path.values.clone(),
            reference,
            prediction: pred.grid_values.clone(),
            observed,
            input_used,
        })
    }

    fn dim(&self) -> usize {
        self.truth.first().map_or(0, Vec::len)
    }

    /// Columns: `time, truth_j.., [reference_j..], prediction_j.., observed, input_used`.
    pub fn write_csv(&self, file: &Path) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_path(file)?;
        let mut header = vec!["time".to_string()];
        header.extend((0..d).map(|j| format!("truth_{j}")));
        if self.reference.is_some() {
            header.extend((0..d).map(|j| format!("reference_{j}")));
        }
        header.extend((0..d).map(|j| format!("prediction_{j}")));
        header.push("observed".into());
        header.push("input_used".into());
        w.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.truth[i].iter().map(f64::to_string));
            if let Some(r) = &self.reference {
                row.extend(r[i].iter().map(f64::to_string));
            }
            row.extend(self.prediction[i].iter().map(f64::to_string));
            row.push(u8::from(self.observed[i]).to_string());
            row.push(u8::from(self.input_used[i]).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(file, e))?;
        Ok(())
    }

    pub fn read_csv(file: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(file)?;
        let header = r.headers()?.clone();
        let cols = |prefix: &str| -> Vec<usize> {
            header
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with(prefix))
                .map(|(i, _)| i)
                .collect()
        };
        let (truth_c, ref_c, pred_c) = (cols("truth_"), cols("reference_"), cols("prediction_"));
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Usage(format!("series file lacks column {name}")))
        };
        let (time_c, obs_c, used_c) = (find("time")?, find("observed")?, find("input_used")?);
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Usage(format!("bad number {s:?}: {e}")))
        };
        let mut t = Self {
            times: vec![],
            truth: vec![],
            reference: (!ref_c.is_empty()).then(Vec::new),
            prediction: vec![],
            observed: vec![],
            input_used: vec![],
        };
        for rec in r.records() {
            let rec = rec?;
            let pick = |c: &[usize]| c.iter().map(|&i| num(&rec[i])).collect::<Result<Vec<f64>>>();
            t.times.push(num(&rec[time_c])?);
            t.truth.push(pick(&truth_c)?);
            if let Some(r) = t.reference.as_mut() {
                r.push(pick(&ref_c)?);
            }
            t.prediction.push(pick(&pred_c)?);
            t.observed.push(&rec[obs_c] == "1");
            t.input_used.push(&rec[used_c] == "1");
        }
        Ok(t)
    }
}

/// Writes the series of one path to `file`; the reference column is filled
/// for GBM datasets.
pub fn export_series(
    params: &ModelParams,
    data: &DatasetBundle,
    index: usize,
    gating: EvalGating,
    file: &Path,
) -> Result<SeriesTable> {
    let path = data
        .paths
        .get(index)
        .ok_or_else(|| Error::Usage(format!("path {index} out of range")))?;
    let obs = gating.apply(path, &data.observations[index])?;
    let pred = forward_path(params, path, &obs)?;
    let reference = match data.gbm_drift() {
        Some(drift) => Some(reference_series(&drift, path, &obs)?),
        None => None,
    };
    let table = SeriesTable::new(path, &obs, &pred, reference)?;
    table.write_csv(file)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gbm_euler_path, generate_dataset, DatasetConfig, GbmVariant};
    use crate::model::ModelConfig;
    use std::f64::consts::PI;

    fn gbm(variant: GbmVariant, n: usize) -> DatasetBundle {
        generate_dataset(&DatasetConfig::gbm(variant, n, 17)).unwrap()
    }

    fn model(d: usize) -> ModelParams {
        ModelParams::init(
            &ModelConfig {
                d,
                latent_dim: 4,
                hidden: vec![5],
                use_output_feedback: true,
                use_recurrent_jump: true,
                signature_level: 1,
                ode_substeps: 1,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let c = Drift::Constant { mu: 2.0 };
        assert_eq!(closed_form_cond_exp(&c, 1.7, 0.4, 0.4).unwrap(), 1.7);
        assert!((closed_form_cond_exp(&c, 1.0, 0.25, 0.75).unwrap() - std::f64::consts::E).abs() < 1e-15);
        let s = Drift::SinePlusOne;
        assert!((closed_form_cond_exp(&s, 2.0, 0.0, 1.0).unwrap() - 2.0 * std::f64::consts::E).abs() < 1e-14);
        assert!(matches!(closed_form_cond_exp(&c, 1.0, 0.5, 0.4), Err(Error::Usage(_))));
    }

    #[test]
    fn time_dependent_integral_matches_quadrature() {
        let s = Drift::SinePlusOne;
        let (a, b) = (0.13, 0.87);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let u = a + (i as f64 + 0.5) * h;
                h * ((2.0 * PI * u).sin() + 1.0)
            })
            .sum();
        assert!((s.integral(a, b) - quad).abs() < 1e-10);
    }

    /// Mean of fine Euler continuations from X_τ approaches the closed form.
    #[test]
    fn closed_form_matches_monte_carlo() {
        let drift = Drift::Constant { mu: 2.0 };
        let n = 20_000u64;
        let finals: Vec<f64> = (0..n)
            .map(|s| gbm_euler_path(1.0, &drift, 0.3, 0.0005, 1000, s).unwrap().values[1000][0])
            .collect();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let want = closed_form_cond_exp(&drift, 1.0, 0.0, 0.5).unwrap();
        // Residual Euler bias at this step is about 1.3e-3, well inside the band.
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} want {want} se {se}");
    }

    #[test]
    fn exact_predictor_scores_zero() {
        for v in GbmVariant::ALL {
            let data = gbm(v, 20);
            let drift = v.drift();
            for g in [EvalGating::AllInputs, EvalGating::InitialOnly, EvalGating::Cutoff { s: 0.5 }] {
                let r = eval_metric_of(&data, &data.split().test, g, |p, o| reference_series(&drift, p, o)).unwrap();
                assert_eq!(r.value, 0.0);
            }
        }
    }

    #[test]
    fn martingale_guess_has_positive_metric() {
        let data = gbm(GbmVariant::Base, 40);
        let r = eval_metric_of(&data, &data.split().test, EvalGating::AllInputs, |p, o| {
            reference_series(&Drift::Constant { mu: 0.0 }, p, o)
        })
        .unwrap();
        assert!(r.value > 0.0);
        let mean = r.per_path.iter().sum::<f64>() / r.per_path.len() as f64;
        assert_eq!(r.value, mean);
    }

    /// Moving the cutoff only changes the reference through the conditioning
    /// observation: recompute with the last used time before `s`.
    #[test]
    fn reference_uses_last_input_before_cutoff() {
        let data = gbm(GbmVariant::TimeDep, 5);
        let drift = GbmVariant::TimeDep.drift();
        let (path, obs) = (&data.paths[0], &data.observations[0]);
        for s in [0.0, 0.3, 0.6, 1.0] {
            let o = EvalGating::Cutoff { s }.apply(path, obs).unwrap();
            let r = reference_series(&drift, path, &o).unwrap();
            for (i, &t) in path.times.iter().enumerate() {
                let g = obs
                    .obs_indices
                    .iter()
                    .copied()
                    .filter(|&g| g <= i && path.times[g] <= s + TIME_EPS)
                    .last()
                    .unwrap();
                let want = closed_form_cond_exp(&drift, path.values[g][0], path.times[g], t).unwrap();
                assert_eq!(r[i][0], want);
            }
        }
    }

    #[test]
    fn pendulum_has_no_closed_form_reference() {
        let data = generate_dataset(&DatasetConfig::pendulum(5, 1)).unwrap();
        let p = model(4);
        assert!(matches!(
            eval_metric(&p, &data, &[0], EvalGating::AllInputs),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn path_mse_oracles() {
        let data = generate_dataset(&DatasetConfig::pendulum(10, 2)).unwrap();
        let idx = data.split().test.clone();
        let exact = path_mse_of(&data, &idx, |p, _| Ok(p.values.clone())).unwrap();
        assert_eq!(exact.value, 0.0);
        let zero = path_mse_of(&data, &idx, |p, _| Ok(vec![vec![0.0; 4]; p.len()])).unwrap();
        let mut direct = 0.0;
        let mut count = 0.0;
        for &i in &idx {
            for v in &data.paths[i].values {
                for x in v {
                    direct += x * x;
                }
                count += 1.0;
            }
        }
        assert!((zero.value - direct / count).abs() < 1e-12 * zero.value);
        let mut rev = idx.clone();
        rev.reverse();
        let p = model(4);
        let a = path_mse(&p, &data, &idx).unwrap().value;
        let b = path_mse(&p, &data, &rev).unwrap().value;
        assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn long_term_cutoffs() {
        let data = gbm(GbmVariant::HighFreq, 3);
        let p = model(1);
        let (path, obs) = (&data.paths[0], &data.observations[0]);
        let full = forward_path(&p, path, obs).unwrap();
        assert_eq!(long_term_predict(&p, path, obs, 1.0).unwrap(), full);
        let initial = forward_path(&p, path, &EvalGating::InitialOnly.apply(path, obs).unwrap()).unwrap();
        assert_eq!(long_term_predict(&p, path, obs, 0.0).unwrap(), initial);
        for s in [0.3, 0.6] {
            let lt = long_term_predict(&p, path, obs, s).unwrap();
            let n = path.times.iter().filter(|t| **t <= s + TIME_EPS).count();
            assert_eq!(&lt.grid_values[..n], &full.grid_values[..n]);
        }
        assert!(long_term_predict(&p, path, obs, 1.5).is_err());
    }

    #[test]
    fn series_export_roundtrip() {
        let data = gbm(GbmVariant::Base, 4);
        let p = model(1);
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("series.csv");
        let table = export_series(&p, &data, 1, EvalGating::Cutoff { s: 0.5 }, &file).unwrap();
        let back = SeriesTable::read_csv(&file).unwrap();
        assert_eq!(back, table);
        let text = fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().count(), data.paths[1].len() + 1);
        let marks = back.observed.iter().filter(|m| **m).count();
        assert_eq!(marks, data.observations[1].len());
        assert!(export_series(&p, &data, 99, EvalGating::AllInputs, &file).is_err());
    }

    #[test]
    fn metrics_report_files() {
        let data = gbm(GbmVariant::Base, 10);
        let r = eval_metric(&model(1), &data, &data.split().test, EvalGating::InitialOnly).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path(), "metrics").unwrap();
        let back: MetricsReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), r.per_path.len() + 1);
    }
}
