use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{content_hash, RunConfig};
use crate::data::{generate_dataset, load_bundle, save_bundle, DatasetBundle, DatasetConfig};
use crate::error::{Error, Result};
use crate::eval::{eval_metric, export_series, path_mse, EvalGating, MetricsReport};
use crate::model::ModelParams;
use crate::train::{train_model_with_hook, TrainReport};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn write_json<T: Serialize>(file: &Path, value: &T) -> Result<()> {
    if let Some(dir) = file.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(file, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(file, e))
}

/// Directory of a dataset under `root`, addressed by the hash of its config.
pub fn dataset_dir(root: &Path, cfg: &DatasetConfig) -> Result<PathBuf> {
    Ok(root.join("datasets").join(content_hash(cfg)?))
}

/// Loads the dataset for `cfg` from `root`, generating and storing it first
/// if absent. Existing files are never rewritten.
pub fn obtain_dataset(root: Option<&Path>, cfg: &DatasetConfig) -> Result<DatasetBundle> {
    let Some(root) = root else {
        return generate_dataset(cfg);
    };
    let dir = dataset_dir(root, cfg)?;
    if dir.join("meta.json").exists() {
        let bundle = load_bundle(&dir)?;
        if &bundle.meta.config != cfg {
            return Err(Error::Config(format!(
                "dataset at {} does not match its address",
                dir.display()
            )));
        }
        return Ok(bundle);
    }
    let bundle = generate_dataset(cfg)?;
    let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
    save_bundle(&bundle, &tmp)?;
    match fs::rename(&tmp, &dir) {
        Ok(()) => {}
        // Another process stored the same content first.
        Err(_) if dir.join("meta.json").exists() => {
            let _ = fs::remove_dir_all(&tmp);
        }
        Err(e) => return Err(Error::io(&dir, e)),
    }
    Ok(bundle)
}

/// Per-epoch metric names recorded during training on GBM datasets.
pub const TEST_METRIC: &str = "test_eval_metric";
pub const VAL_METRIC: &str = "val_eval_metric";

/// Trains with the run's configuration. On GBM datasets the closed-form
/// metric on the test and validation splits is recorded every epoch.
pub fn train_run(cfg: &RunConfig, data: &DatasetBundle) -> Result<(ModelParams, TrainReport)> {
    let gbm = data.gbm_drift().is_some();
    let gating = cfg.eval.gating;
    let split = data.split().clone();
    let mut hook = |_: usize, params: &ModelParams| -> Result<BTreeMap<String, f64>> {
        let mut m = BTreeMap::new();
        if gbm {
            if !split.test.is_empty() {
                m.insert(TEST_METRIC.into(), eval_metric(params, data, &split.test, gating)?.value);
            }
            if !split.val.is_empty() {
                m.insert(VAL_METRIC.into(), eval_metric(params, data, &split.val, gating)?.value);
            }
        }
        Ok(m)
    };
    train_model_with_hook(data, &cfg.model, &cfg.train, &mut hook)
}

/// Test-split metrics of a trained model under the run's evaluation settings.
pub fn evaluate_run(cfg: &RunConfig, data: &DatasetBundle, params: &ModelParams) -> Result<Vec<(String, MetricsReport)>> {
    let test = &data.split().test;
    if data.gbm_drift().is_none() {
        return Ok(vec![("path_mse".into(), path_mse(params, data, test)?)]);
    }
    let mut out = vec![("eval_metric".into(), eval_metric(params, data, test, cfg.eval.gating)?)];
    for &s in &cfg.eval.long_term {
        let r = eval_metric(params, data, test, EvalGating::Cutoff { s })?;
        out.push((format!("eval_metric_s{s}"), r));
    }
    Ok(out)
}

/// Writes series files for the configured test positions (default: the first).
pub fn export_run(cfg: &RunConfig, data: &DatasetBundle, params: &ModelParams, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let test = &data.split().test;
    let positions = if cfg.eval.export_paths.is_empty() {
        vec![0]
    } else {
        cfg.eval.export_paths.clone()
    };
    let mut files = Vec::new();
    for pos in positions {
        let index = *test
            .get(pos)
            .ok_or_else(|| Error::Usage(format!("test position {pos} out of range ({} test paths)", test.len())))?;
        let file = dir.join(format!("path_{index}.csv"));
        export_series(params, data, index, cfg.eval.gating, &file)?;
        files.push(file);
    }
    Ok(files)
}
