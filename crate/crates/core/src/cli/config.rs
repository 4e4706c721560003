use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetConfig, GeneratorSpec};
use crate::error::{Error, Result};
use crate::eval::EvalGating;
use crate::grad::AdamHyper;
use crate::model::ModelConfig;
use crate::train::{ScheduleSpec, TrainConfig, DEFAULT_BATCH_SIZE};

pub const RUN_SCHEMA: &str = "pdnjode-run/v1";

/// Decay horizon of the increasing-input-skipping variants, in epochs.
pub const DEFAULT_DECAY_EPOCHS: f64 = 100.0;
pub const DEFAULT_EPOCHS: usize = 200;

/// Named model variants: output feedback on or off, combined with an input
/// schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "N-OF")]
    NOf,
    #[serde(rename = "N-IS")]
    NIs,
    #[serde(rename = "N-OF-IS")]
    NOfIs,
    #[serde(rename = "N-IIS")]
    NIis,
    #[serde(rename = "N-OF-IIS")]
    NOfIis,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::N,
        Variant::NOf,
        Variant::NIs,
        Variant::NOfIs,
        Variant::NIis,
        Variant::NOfIis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::N => "N",
            Variant::NOf => "N-OF",
            Variant::NIs => "N-IS",
            Variant::NOfIs => "N-OF-IS",
            Variant::NIis => "N-IIS",
            Variant::NOfIis => "N-OF-IIS",
        }
    }

    pub fn output_feedback(self) -> bool {
        matches!(self, Variant::NOf | Variant::NOfIs | Variant::NOfIis)
    }

    pub fn schedule(self, decay_epochs: f64) -> ScheduleSpec {
        match self {
            Variant::N | Variant::NOf => ScheduleSpec::Always,
            Variant::NIs | Variant::NOfIs => ScheduleSpec::Never,
            Variant::NIis | Variant::NOfIis => ScheduleSpec::LinearDecay { e0: decay_epochs },
        }
    }

    /// Validation inputs: all observations for the standard variants, the
    /// initial value only for every input-skipping variant.
    pub fn val_gating(self) -> EvalGating {
        match self {
            Variant::N | Variant::NOf => EvalGating::AllInputs,
            _ => EvalGating::InitialOnly,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub use_output_feedback: Option<bool>,
    pub use_recurrent_jump: Option<bool>,
    pub signature_level: Option<usize>,
    pub ode_substeps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub schedule: Option<ScheduleSpec>,
    /// Decay horizon used when the variant implies a linear decay.
    pub decay_epochs: Option<f64>,
    pub patience: Option<usize>,
    pub adam: Option<AdamHyper>,
    pub val_gating: Option<EvalGating>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Input convention for the GBM metric; defaults to the initial value only.
    pub gating: Option<EvalGating>,
    /// Cutoffs `s` for long-term metrics on GBM datasets.
    #[serde(default)]
    pub long_term: Vec<f64>,
    /// Test-split positions of the paths to export.
    #[serde(default)]
    pub export_paths: Vec<usize>,
}

/// Experiment document as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub gating: EvalGating,
    pub long_term: Vec<f64>,
    pub export_paths: Vec<usize>,
}

/// Fully specified run: every default filled in. Echoed to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub variant: Option<Variant>,
    pub eval: EvalSettings,
    pub output_dir: Option<String>,
}

/// Command-line adjustments applied on top of a document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub variant: Option<Variant>,
    /// Sets both the dataset and the training seed.
    pub seed: Option<u64>,
    /// Multiplies path counts, latent and hidden widths.
    pub scale: Option<f64>,
    pub output_dir: Option<String>,
}

fn scaled(n: usize, scale: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * scale).round() as usize).max(1)
}

/// Architecture defaults per dataset kind.
pub fn default_model(generator: &GeneratorSpec) -> ModelConfig {
    let (latent_dim, hidden, signature_level) = match generator {
        GeneratorSpec::Pendulum(_) => (400, 200, 0),
        GeneratorSpec::Gbm(_) => (100, 100, 3),
    };
    ModelConfig {
        d: generator.dim(),
        latent_dim,
        hidden: vec![hidden],
        use_output_feedback: false,
        use_recurrent_jump: true,
        signature_level,
        ode_substeps: 1,
    }
}

/// Parses a JSON document and fills defaults; unknown keys are fatal.
pub fn parse_config(document: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(document).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
}

pub fn validate_config(doc: &ExperimentConfig, overrides: &Overrides) -> Result<RunConfig> {
    let mut dataset = doc.dataset.clone();
    if let Some(seed) = overrides.seed {
        dataset.seed = seed;
    }
    if let Some(scale) = overrides.scale {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("scale {scale} must be positive")));
        }
    }
    let scale = overrides.scale.unwrap_or(1.0);
    dataset.n_paths = scaled(dataset.n_paths, scale);
    dataset.validate()?;

    let ts = &doc.train;
    let variant = match (overrides.variant, ts.variant) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!(
                "variant {a} on the command line conflicts with variant {b} in the config"
            )))
        }
        (a, b) => a.or(b),
    };
    let decay = ts.decay_epochs.unwrap_or(DEFAULT_DECAY_EPOCHS);
    let schedule = match (variant, ts.schedule) {
        (Some(v), Some(s)) if s != v.schedule(decay) => {
            return Err(Error::Config(format!(
                "variant {v} implies schedule {:?}, config sets {:?}",
                v.schedule(decay),
                s
            )))
        }
        (Some(v), _) => v.schedule(decay),
        (None, Some(s)) => s,
        (None, None) => Variant::N.schedule(decay),
    };
    if ts.decay_epochs.is_some() && !matches!(schedule, ScheduleSpec::LinearDecay { .. }) {
        return Err(Error::Config("decay_epochs only applies to linearly decaying schedules".into()));
    }

    let ms = &doc.model;
    let defaults = default_model(&dataset.generator);
    let use_output_feedback = match (variant, ms.use_output_feedback) {
        (Some(v), Some(of)) if of != v.output_feedback() => {
            return Err(Error::Config(format!(
                "variant {v} implies use_output_feedback = {}, config sets {of}",
                v.output_feedback()
            )))
        }
        (Some(v), _) => v.output_feedback(),
        (None, of) => of.unwrap_or(false),
    };
    let hidden = ms.hidden.clone().unwrap_or(defaults.hidden);
    if hidden.is_empty() {
        return Err(Error::Config("model.hidden needs at least one layer".into()));
    }
    let model = ModelConfig {
        d: dataset.generator.dim(),
        latent_dim: scaled(ms.latent_dim.unwrap_or(defaults.latent_dim), scale),
        hidden: hidden.iter().map(|h| scaled(*h, scale)).collect(),
        use_output_feedback,
        use_recurrent_jump: ms.use_recurrent_jump.unwrap_or(defaults.use_recurrent_jump),
        signature_level: ms.signature_level.unwrap_or(defaults.signature_level),
        ode_substeps: ms.ode_substeps.unwrap_or(defaults.ode_substeps),
    };
    if ms.hidden.as_ref().is_some_and(|h| h.contains(&0)) || ms.latent_dim == Some(0) {
        return Err(Error::Config("model widths must be positive".into()));
    }
    model.validate()?;

    let val_gating = ts.val_gating.unwrap_or_else(|| match variant {
        Some(v) => v.val_gating(),
        None if schedule == ScheduleSpec::Always => EvalGating::AllInputs,
        None => EvalGating::InitialOnly,
    });
    let train = TrainConfig {
        epochs: ts.epochs.unwrap_or(DEFAULT_EPOCHS),
        batch_size: ts.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
        seed: overrides.seed.or(ts.seed).unwrap_or(0),
        schedule,
        patience: ts.patience,
        adam: ts.adam.unwrap_or_default(),
        val_gating,
    };
    train.validate()?;

    let gating = doc.eval.gating.unwrap_or(EvalGating::InitialOnly);
    gating.validate()?;
    if let Some(s) = doc.eval.long_term.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("long-term cutoff {s} must be a non-negative time")));
    }
    Ok(RunConfig {
        schema: RUN_SCHEMA.to_string(),
        dataset,
        model,
        train,
        variant,
        eval: EvalSettings {
            gating,
            long_term: doc.eval.long_term.clone(),
            export_paths: doc.eval.export_paths.clone(),
        },
        output_dir: overrides.output_dir.clone().or_else(|| doc.output_dir.clone()),
    })
}

/// First 12 hex digits of the SHA-256 of a value's canonical JSON.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

impl RunConfig {
    /// `<hash of the config without output_dir>-s<train seed>`
    pub fn run_name(&self) -> Result<String> {
        let mut keyed = self.clone();
        keyed.output_dir = None;
        Ok(format!("{}-s{}", content_hash(&keyed)?, self.train.seed))
    }
}
