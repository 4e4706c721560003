//! Command-line driver.
//!
//! ```text
//! pdnjode generate  --config exp.json [--seed N] [--scale X] [--out DIR]
//! pdnjode train     --config exp.json [--variant N-OF-IIS] ...
//! pdnjode evaluate  --config exp.json [--checkpoint FILE] ...
//! pdnjode export    --config exp.json [--checkpoint FILE] ...
//! pdnjode reproduce table1|table2 [--scale 0.1] [--seed N] [--epochs E] [--out DIR]
//! ```
//!
//! Every flag can also be set through an environment variable with the
//! `PDNJODE_` prefix (`PDNJODE_CONFIG`, `PDNJODE_VARIANT`, `PDNJODE_SEED`,
//! `PDNJODE_SCALE`, `PDNJODE_OUT`, `PDNJODE_EPOCHS`). Results are printed as
//! JSON on stdout; failures print `{"error": {"kind", "message"}}` on stderr
//! and exit with a nonzero code.

mod config;
mod reproduce;
mod runner;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::{
    content_hash, default_model, parse_config, validate_config, EvalSection, EvalSettings, ExperimentConfig,
    ModelSection, Overrides, RunConfig, TrainSection, Variant, DEFAULT_DECAY_EPOCHS, DEFAULT_EPOCHS, RUN_SCHEMA,
};
pub use reproduce::{
    reproduce_table1, reproduce_table2, SweepOptions, Table1, Table1Row, Table2, Table2Row, VariantRun, FULL_PATHS,
};
pub use runner::{
    dataset_dir, evaluate_run, export_run, obtain_dataset, train_run, write_json, CHECKPOINT_FILE, CONFIG_FILE,
    TEST_METRIC, VAL_METRIC,
};

use crate::data::{GbmVariant, DATASET_SCHEMA};
use crate::error::{Error, Result};
use crate::model::ModelParams;

const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "pdnjode", version, about = "Path-dependent neural jump ODE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, env = "PDNJODE_CONFIG")]
    config: Option<PathBuf>,
    /// Model variant: N, N-OF, N-IS, N-OF-IS, N-IIS, N-OF-IIS.
    #[arg(long, env = "PDNJODE_VARIANT")]
    variant: Option<String>,
    /// Seed for data generation and training.
    #[arg(long, env = "PDNJODE_SEED")]
    seed: Option<u64>,
    /// Multiplier for path counts and network widths.
    #[arg(long, env = "PDNJODE_SCALE")]
    scale: Option<f64>,
    /// Output root directory.
    #[arg(long, env = "PDNJODE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableKind {
    Table1,
    Table2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the configured dataset.
    Generate(Common),
    /// Train one model.
    Train(Common),
    /// Compute test metrics for a trained model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write per-path prediction series as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a scaled variant sweep and write a comparison table.
    Reproduce {
        table: TableKind,
        #[command(flatten)]
        common: Common,
        /// Training epochs per variant.
        #[arg(long, env = "PDNJODE_EPOCHS")]
        epochs: Option<usize>,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            report_error("usage", &e.to_string());
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            0
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            1
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let doc = json!({"error": {"kind": kind, "message": message.trim_end()}});
    let _ = writeln!(std::io::stderr(), "{doc}");
}

struct Resolved {
    cfg: RunConfig,
    root: PathBuf,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Usage("--config (or PDNJODE_CONFIG) is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = parse_config(&text)?;
    let overrides = Overrides {
        variant: common.variant.as_deref().map(str::parse).transpose()?,
        seed: common.seed,
        scale: common.scale,
        output_dir: common.out.as_ref().map(|p| p.display().to_string()),
    };
    let cfg = validate_config(&doc, &overrides)?;
    let root = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| DEFAULT_OUT.into()));
    Ok(Resolved { cfg, root })
}

fn run_dir(r: &Resolved) -> Result<PathBuf> {
    Ok(r.root.join(r.cfg.run_name()?))
}

fn load_params(r: &Resolved, checkpoint: Option<&Path>) -> Result<ModelParams> {
    let file = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => run_dir(r)?.join(CHECKPOINT_FILE),
    };
    if !file.exists() {
        return Err(Error::Usage(format!(
            "no checkpoint at {}; run `train` with the same configuration first",
            file.display()
        )));
    }
    let params = ModelParams::load(&file)?;
    if params.config != r.cfg.model {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different model configuration",
            file.display()
        )));
    }
    Ok(params)
}

fn execute(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Generate(common) => {
            let r = resolve(&common)?;
            let data = obtain_dataset(Some(&r.root), &r.cfg.dataset)?;
            Ok(json!({
                "schema": DATASET_SCHEMA,
                "dataset_dir": dataset_dir(&r.root, &r.cfg.dataset)?,
                "n_paths": data.len(),
                "grid_len": data.meta.grid_len,
                "split": data.split(),
            }))
        }
        Command::Train(common) => {
            let r = resolve(&common)?;
            let data = obtain_dataset(Some(&r.root), &r.cfg.dataset)?;
            let dir = run_dir(&r)?;
            write_json(&dir.join(CONFIG_FILE), &r.cfg)?;
            let (params, mut report) = train_run(&r.cfg, &data)?;
            params.save(&dir.join(CHECKPOINT_FILE))?;
            report.checkpoint = Some(CHECKPOINT_FILE.into());
            report.save(&dir)?;
            Ok(json!({
                "run_dir": dir,
                "variant": r.cfg.variant,
                "best_epoch": report.best_epoch,
                "best_loss": report.best_loss,
                "epochs_run": report.epochs.len(),
            }))
        }
        Command::Evaluate { common, checkpoint } => {
            let r = resolve(&common)?;
            let data = obtain_dataset(Some(&r.root), &r.cfg.dataset)?;
            let params = load_params(&r, checkpoint.as_deref())?;
            let dir = run_dir(&r)?;
            let mut summary = serde_json::Map::new();
            for (name, mut report) in evaluate_run(&r.cfg, &data, &params)? {
                report.checkpoint = Some(
                    checkpoint
                        .as_ref()
                        .map_or_else(|| CHECKPOINT_FILE.to_string(), |p| p.display().to_string()),
                );
                report.save(&dir.join("metrics"), &name)?;
                summary.insert(name, json!(report.value));
            }
            write_json(&dir.join("metrics.json"), &summary)?;
            Ok(json!({"run_dir": dir, "metrics": summary}))
        }
        Command::Export { common, checkpoint } => {
            let r = resolve(&common)?;
            let data = obtain_dataset(Some(&r.root), &r.cfg.dataset)?;
            let params = load_params(&r, checkpoint.as_deref())?;
            let files = export_run(&r.cfg, &data, &params, &run_dir(&r)?.join("series"))?;
            Ok(json!({"files": files}))
        }
        Command::Reproduce { table, common, epochs } => {
            if common.config.is_some() {
                return Err(Error::Usage("reproduce uses built-in configurations; drop --config".into()));
            }
            let scale = common.scale.unwrap_or(0.1);
            let seed = common.seed.unwrap_or(0);
            let root = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let mut opts = SweepOptions::new(scale, seed);
            opts.epochs = epochs;
            opts.variants = common
                .variant
                .as_deref()
                .map(|v| v.split(',').map(str::parse).collect::<Result<Vec<Variant>>>())
                .transpose()?
                .unwrap_or_default();
            match table {
                TableKind::Table1 => {
                    let dir = root.join(format!("table1-x{scale}-s{seed}"));
                    opts.out = Some(dir.clone());
                    let (t, _) = reproduce_table1(&opts)?;
                    Ok(json!({"table": dir.join("table1.csv"), "rows": t.rows}))
                }
                TableKind::Table2 => {
                    let dir = root.join(format!("table2-x{scale}-s{seed}"));
                    opts.out = Some(dir.clone());
                    let (t, _) = reproduce_table2(&opts, &GbmVariant::ALL)?;
                    Ok(json!({"table": dir.join("table2.csv"), "rows": t.rows}))
                }
            }
        }
    }
}
