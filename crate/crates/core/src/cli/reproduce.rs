use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{validate_config, ExperimentConfig, Overrides, RunConfig, TrainSection, Variant};
use super::runner::{obtain_dataset, train_run, write_json, CHECKPOINT_FILE, CONFIG_FILE, TEST_METRIC, VAL_METRIC};
use crate::data::{DatasetBundle, DatasetConfig, GbmVariant};
use crate::error::{Error, Result};
use crate::eval::{path_mse, relative_rmse, EvalGating};
use crate::model::ModelParams;
use crate::train::TrainReport;

/// Paths per dataset before scaling.
pub const FULL_PATHS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub scale: f64,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub variants: Vec<Variant>,
    /// Root for datasets and per-variant run directories.
    pub out: Option<PathBuf>,
}

impl SweepOptions {
    pub fn new(scale: f64, seed: u64) -> Self {
        Self {
            scale,
            seed,
            epochs: None,
            variants: vec![],
            out: None,
        }
    }
}

/// One trained variant of a sweep.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub config: RunConfig,
    pub params: ModelParams,
    pub report: TrainReport,
}

fn run_config(dataset: DatasetConfig, variant: Variant, opts: &SweepOptions) -> Result<RunConfig> {
    let doc = ExperimentConfig {
        dataset,
        model: Default::default(),
        train: TrainSection {
            variant: Some(variant),
            epochs: opts.epochs,
            ..Default::default()
        },
        eval: Default::default(),
        output_dir: None,
    };
    validate_config(
        &doc,
        &Overrides {
            seed: Some(opts.seed),
            scale: Some(opts.scale),
            ..Default::default()
        },
    )
}

fn train_variant(cfg: RunConfig, variant: Variant, data: &DatasetBundle, out: Option<&Path>) -> Result<VariantRun> {
    let (params, mut report) = train_run(&cfg, data)?;
    if let Some(root) = out {
        let dir = root.join(cfg.run_name()?);
        write_json(&dir.join(CONFIG_FILE), &cfg)?;
        report.checkpoint = Some(CHECKPOINT_FILE.into());
        params.save(&dir.join(CHECKPOINT_FILE))?;
        report.save(&dir)?;
    }
    Ok(VariantRun {
        variant,
        config: cfg,
        params,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub variant: Variant,
    pub test_mse: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub scale: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    pub fn mse(&self, v: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.test_mse)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("table1.json"), self)?;
        let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
        w.write_record(["variant", "test_mse", "best_epoch"])?;
        for r in &self.rows {
            w.write_record([r.variant.name().to_string(), r.test_mse.to_string(), r.best_epoch.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))
    }
}

/// Double-pendulum sweep: every variant trained on the same scaled dataset,
/// scored by the initial-value-only grid MSE on the test split.
pub fn reproduce_table1(opts: &SweepOptions) -> Result<(Table1, Vec<VariantRun>)> {
    let variants = if opts.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        opts.variants.clone()
    };
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut n_paths = 0;
    let mut data: Option<DatasetBundle> = None;
    for v in variants {
        let cfg = run_config(DatasetConfig::pendulum(FULL_PATHS, opts.seed), v, opts)?;
        if data.is_none() {
            data = Some(obtain_dataset(opts.out.as_deref(), &cfg.dataset)?);
        }
        let data = data.as_ref().expect("dataset loaded above");
        n_paths = data.len();
        let run = train_variant(cfg, v, data, opts.out.as_deref())?;
        rows.push(Table1Row {
            variant: v,
            test_mse: path_mse(&run.params, data, &data.split().test)?.value,
            best_epoch: run.report.best_epoch,
        });
        runs.push(run);
    }
    let table = Table1 {
        scale: opts.scale,
        seed: opts.seed,
        n_paths,
        rows,
    };
    if let Some(out) = &opts.out {
        table.write(out)?;
    }
    Ok((table, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub dataset: GbmVariant,
    pub variant: Variant,
    /// Minimum over epochs of the test-split metric.
    pub min_test_metric: f64,
    /// Minimum over epochs of the validation-split metric.
    pub min_val_metric: f64,
    /// Relative RMSE of the selected checkpoint against the closed form, s = 0.
    pub long_term_rel_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub scale: f64,
    pub seed: u64,
    pub rows: Vec<Table2Row>,
}

impl Table2 {
    pub fn row(&self, dataset: GbmVariant, v: Variant) -> Option<&Table2Row> {
        self.rows.iter().find(|r| r.dataset == dataset && r.variant == v)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("table2.json"), self)?;
        let mut w = csv::Writer::from_path(dir.join("table2.csv"))?;
        w.write_record(["dataset", "variant", "min_test_metric", "min_val_metric", "long_term_rel_rmse"])?;
        for r in &self.rows {
            w.write_record([
                r.dataset.name().to_string(),
                r.variant.name().to_string(),
                r.min_test_metric.to_string(),
                r.min_val_metric.to_string(),
                r.long_term_rel_rmse.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))
    }
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// GBM sweep: the standard and the enhanced variant on each dataset, scored
/// by the closed-form metric with the initial value as the only input.
pub fn reproduce_table2(opts: &SweepOptions, datasets: &[GbmVariant]) -> Result<(Table2, Vec<VariantRun>)> {
    let variants = if opts.variants.is_empty() {
        vec![Variant::N, Variant::NOfIis]
    } else {
        opts.variants.clone()
    };
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &ds in datasets {
        let mut data: Option<DatasetBundle> = None;
        for &v in &variants {
            let cfg = run_config(DatasetConfig::gbm(ds, FULL_PATHS, opts.seed), v, opts)?;
            if data.is_none() {
                data = Some(obtain_dataset(opts.out.as_deref(), &cfg.dataset)?);
            }
            let data = data.as_ref().expect("dataset loaded above");
            let run = train_variant(cfg, v, data, opts.out.as_deref())?;
            rows.push(Table2Row {
                dataset: ds,
                variant: v,
                min_test_metric: min_of(&run.report.metric(TEST_METRIC)),
                min_val_metric: min_of(&run.report.metric(VAL_METRIC)),
                long_term_rel_rmse: relative_rmse(&run.params, data, &data.split().test, EvalGating::InitialOnly)?,
            });
            runs.push(run);
        }
    }
    let table = Table2 {
        scale: opts.scale,
        seed: opts.seed,
        rows,
    };
    if let Some(out) = &opts.out {
        table.write(out)?;
    }
    Ok((table, runs))
}
