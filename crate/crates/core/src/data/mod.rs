//! Synthetic datasets: double-pendulum paths, geometric Brownian motion with
//! constant or time-dependent drift, and random observation times.
//!
//! On disk a dataset is a directory with two files:
//!
//! * `meta.json` — `{"schema", "config", "split": {"train","val","test"}, "d", "grid_len"}`
//! * `paths.jsonl` — one object per path, in index order:
//!   `{"index", "times", "values", "obs_indices", "masks"}` where `values` is
//!   a list of `d`-vectors (one per grid time) and `masks` a list of boolean
//!   `d`-vectors (one per observation).
//!
//! Input flags are not stored; loading yields all flags on.

mod gbm;
mod observe;
mod pendulum;

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gbm::{gbm_euler_path, Drift};
pub use observe::{sample_observations, ObservationSet};
pub use pendulum::{hamiltonian, pendulum_path, pendulum_rhs, rk4_integrate, PendulumConstants, PendulumState};

use crate::error::{Error, Result};
use crate::seed;

pub const DATASET_SCHEMA: &str = "pdnjode-dataset/v1";

/// One realization on a regular grid; `values[i]` is the state at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 || self.times.len() != self.values.len() {
            return Err(Error::Usage(format!(
                "path with {} times and {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times[0] != 0.0 || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Usage("path times must start at 0 and increase".into()));
        }
        let d = self.dim();
        if d == 0 || self.values.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Usage("path values must be finite vectors of equal length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GbmVariant {
    #[serde(rename = "BS-Base")]
    Base,
    #[serde(rename = "BS-HighFreq")]
    HighFreq,
    #[serde(rename = "BS-TimeDep")]
    TimeDep,
}

impl GbmVariant {
    pub const ALL: [GbmVariant; 3] = [GbmVariant::Base, GbmVariant::HighFreq, GbmVariant::TimeDep];

    pub fn drift(self) -> Drift {
        match self {
            GbmVariant::Base | GbmVariant::HighFreq => Drift::Constant { mu: 2.0 },
            GbmVariant::TimeDep => Drift::SinePlusOne,
        }
    }

    pub fn obs_prob(self) -> f64 {
        match self {
            GbmVariant::HighFreq => 0.4,
            GbmVariant::Base | GbmVariant::TimeDep => 0.1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GbmVariant::Base => "BS-Base",
            GbmVariant::HighFreq => "BS-HighFreq",
            GbmVariant::TimeDep => "BS-TimeDep",
        }
    }
}

impl FromStr for GbmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GbmVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown GBM variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSpec {
    pub obs_prob: f64,
    pub step: f64,
    pub horizon: f64,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    pub constants: PendulumConstants,
    pub observe_final_point: bool,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            obs_prob: 0.1,
            step: 0.025,
            horizon: 2.5,
            alpha_mean: PI,
            alpha_std: 0.2,
            constants: PendulumConstants::default(),
            observe_final_point: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmSpec {
    pub variant: GbmVariant,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_gbm_dt")]
    pub dt: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "yes")]
    pub observe_final_point: bool,
}

fn one() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    0.3
}
fn default_gbm_dt() -> f64 {
    0.01
}
fn yes() -> bool {
    true
}

impl GbmSpec {
    pub fn new(variant: GbmVariant) -> Self {
        Self {
            variant,
            x0: 1.0,
            sigma: 0.3,
            dt: 0.01,
            horizon: 1.0,
            observe_final_point: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Pendulum(PendulumSpec),
    Gbm(GbmSpec),
}

impl GeneratorSpec {
    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Pendulum(_) => 4,
            GeneratorSpec::Gbm(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorSpec::Pendulum(_) => "pendulum",
            GeneratorSpec::Gbm(_) => "gbm",
        }
    }
}

fn steps_for(horizon: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon {horizon} and step {step} must be positive")));
    }
    let n = (horizon / step).round();
    if (n * step - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!("horizon {horizon} is not a multiple of step {step}")));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: GeneratorSpec,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.2
}
fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn pendulum(n_paths: usize, seed: u64) -> Self {
        Self {
            generator: GeneratorSpec::Pendulum(PendulumSpec::default()),
            n_paths,
            seed,
            val_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    pub fn gbm(variant: GbmVariant, n_paths: usize, seed: u64) -> Self {
        Self {
            generator: GeneratorSpec::Gbm(GbmSpec::new(variant)),
            n_paths,
            seed,
            val_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        for (name, f) in [("val_fraction", self.val_fraction), ("test_fraction", self.test_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} = {f} not in [0, 1)")));
            }
        }
        match &self.generator {
            GeneratorSpec::Pendulum(p) => {
                if !(p.obs_prob > 0.0 && p.obs_prob <= 1.0) {
                    return Err(Error::Config(format!("obs_prob {} not in (0, 1]", p.obs_prob)));
                }
                if !(p.alpha_std >= 0.0) {
                    return Err(Error::Config("alpha_std must be non-negative".into()));
                }
                let c = &p.constants;
                if [c.m1, c.m2, c.l1, c.l2].iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config("pendulum masses and lengths must be positive".into()));
                }
                steps_for(p.horizon, p.step)?;
            }
            GeneratorSpec::Gbm(g) => {
                if !(g.x0 > 0.0) || !(g.sigma >= 0.0) {
                    return Err(Error::Config("gbm needs x0 > 0 and sigma >= 0".into()));
                }
                steps_for(g.horizon, g.dt)?;
            }
        }
        make_split(self.n_paths, self.val_fraction, self.test_fraction).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous split: training paths first, then validation, then test.
/// The validation share is taken from the non-test paths.
pub fn make_split(n: usize, val_fraction: f64, test_fraction: f64) -> Result<Split> {
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = ((n - n_test) as f64 * val_fraction).round() as usize;
    let n_train = n - n_test - n_val;
    if n_train == 0 {
        return Err(Error::Config(format!(
            "{n} paths leave no training paths after val/test split"
        )));
    }
    Ok(Split {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: String,
    pub config: DatasetConfig,
    pub split: Split,
    pub d: usize,
    pub grid_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub paths: Vec<PathSample>,
    pub observations: Vec<ObservationSet>,
    pub meta: DatasetMeta,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn split(&self) -> &Split {
        &self.meta.split
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    /// Drift of the generating SDE, if this is a GBM dataset.
    pub fn gbm_drift(&self) -> Option<Drift> {
        match &self.meta.config.generator {
            GeneratorSpec::Gbm(g) => Some(g.variant.drift()),
            GeneratorSpec::Pendulum(_) => None,
        }
    }
}

/// Initial states `(α, α, 0, 0)` with `α ~ N(mean, std²)`, RK4 paths,
/// Bernoulli observation times and full masks.
pub fn sample_pendulum_dataset(cfg: &DatasetConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let GeneratorSpec::Pendulum(spec) = &cfg.generator else {
        return Err(Error::Config("expected a pendulum generator".into()));
    };
    let n_steps = steps_for(spec.horizon, spec.step)?;
    let normal = Normal::new(spec.alpha_mean, spec.alpha_std)
        .map_err(|e| Error::Config(format!("alpha distribution: {e}")))?;
    let items: Vec<Result<(PathSample, ObservationSet)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(cfg.seed, &[seed::stream::PATH, i as u64]);
            let alpha = normal.sample(&mut rng);
            let x0 = PendulumState {
                alpha1: alpha,
                alpha2: alpha,
                p1: 0.0,
                p2: 0.0,
            };
            let path = pendulum_path(x0, &spec.constants, spec.step, n_steps)?;
            let obs_seed = seed::derive_seed(cfg.seed, &[seed::stream::OBSERVATION, i as u64]);
            let obs = sample_observations(path.len(), spec.obs_prob, 4, spec.observe_final_point, obs_seed)?;
            Ok((path, obs))
        })
        .collect();
    assemble(cfg, items, 4, n_steps + 1)
}

/// Euler-Maruyama GBM paths for one of the three Black-Scholes variants.
pub fn sample_gbm_dataset(cfg: &DatasetConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let GeneratorSpec::Gbm(spec) = &cfg.generator else {
        return Err(Error::Config("expected a gbm generator".into()));
    };
    let n_steps = steps_for(spec.horizon, spec.dt)?;
    let drift = spec.variant.drift();
    let prob = spec.variant.obs_prob();
    let items: Vec<Result<(PathSample, ObservationSet)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let path_seed = seed::derive_seed(cfg.seed, &[seed::stream::PATH, i as u64]);
            let path = gbm_euler_path(spec.x0, &drift, spec.sigma, spec.dt, n_steps, path_seed)?;
            let obs_seed = seed::derive_seed(cfg.seed, &[seed::stream::OBSERVATION, i as u64]);
            let obs = sample_observations(path.len(), prob, 1, spec.observe_final_point, obs_seed)?;
            Ok((path, obs))
        })
        .collect();
    assemble(cfg, items, 1, n_steps + 1)
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<DatasetBundle> {
    match cfg.generator {
        GeneratorSpec::Pendulum(_) => sample_pendulum_dataset(cfg),
        GeneratorSpec::Gbm(_) => sample_gbm_dataset(cfg),
    }
}

fn assemble(
    cfg: &DatasetConfig,
    items: Vec<Result<(PathSample, ObservationSet)>>,
    d: usize,
    grid_len: usize,
) -> Result<DatasetBundle> {
    let mut paths = Vec::with_capacity(items.len());
    let mut observations = Vec::with_capacity(items.len());
    for item in items {
        let (p, o) = item?;
        paths.push(p);
        observations.push(o);
    }
    Ok(DatasetBundle {
        paths,
        observations,
        meta: DatasetMeta {
            schema: DATASET_SCHEMA.to_string(),
            config: cfg.clone(),
            split: make_split(cfg.n_paths, cfg.val_fraction, cfg.test_fraction)?,
            d,
            grid_len,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    index: usize,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    obs_indices: Vec<usize>,
    masks: Vec<Vec<bool>>,
}

pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&bundle.meta)?;
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;

    let paths_path = dir.join("paths.jsonl");
    let file = File::create(&paths_path).map_err(|e| Error::io(&paths_path, e))?;
    let mut w = BufWriter::new(file);
    for (i, (p, o)) in bundle.paths.iter().zip(&bundle.observations).enumerate() {
        let rec = PathRecord {
            index: i,
            times: p.times.clone(),
            values: p.values.clone(),
            obs_indices: o.obs_indices.clone(),
            masks: o.masks.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(&paths_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&paths_path, e))
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    if meta.schema != DATASET_SCHEMA {
        return Err(Error::Config(format!("unsupported dataset schema {:?}", meta.schema)));
    }
    let paths_path = dir.join("paths.jsonl");
    let file = File::open(&paths_path).map_err(|e| Error::io(&paths_path, e))?;
    let mut paths = Vec::new();
    let mut observations = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&paths_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PathRecord = serde_json::from_str(&line)?;
        if rec.index != i {
            return Err(Error::Config(format!("path record {} found at line {}", rec.index, i)));
        }
        let n = rec.obs_indices.len();
        let obs = ObservationSet {
            obs_indices: rec.obs_indices,
            masks: rec.masks,
            input_flags: vec![true; n],
        };
        let path = PathSample {
            times: rec.times,
            values: rec.values,
        };
        obs.validate(path.len())?;
        paths.push(path);
        observations.push(obs);
    }
    if paths.len() != meta.config.n_paths {
        return Err(Error::Config(format!(
            "meta announces {} paths, file holds {}",
            meta.config.n_paths,
            paths.len()
        )));
    }
    Ok(DatasetBundle {
        paths,
        observations,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_grid_and_observation_rate() {
        let cfg = DatasetConfig::pendulum(200, 1);
        let b = sample_pendulum_dataset(&cfg).unwrap();
        assert_eq!(b.meta.grid_len, 101);
        assert!(b.paths.iter().all(|p| p.len() == 101));
        for (p, o) in b.paths.iter().zip(&b.observations) {
            p.validate().unwrap();
            o.validate(p.len()).unwrap();
            assert_eq!(p.values[0][0], p.values[0][1]);
            assert_eq!(&p.values[0][2..], &[0.0, 0.0]);
        }
        let mean_obs = b.observations.iter().map(|o| o.len() as f64).sum::<f64>() / 200.0;
        assert!((mean_obs - 11.0).abs() < 1.5, "{mean_obs}");
    }

    #[test]
    fn pendulum_full_observation() {
        let mut cfg = DatasetConfig::pendulum(5, 2);
        if let GeneratorSpec::Pendulum(p) = &mut cfg.generator {
            p.obs_prob = 1.0;
        }
        let b = sample_pendulum_dataset(&cfg).unwrap();
        assert!(b.observations.iter().all(|o| o.len() == 101));
    }

    #[test]
    fn gbm_variants() {
        assert_eq!(GbmVariant::Base.obs_prob(), 0.1);
        assert_eq!(GbmVariant::Base.drift(), Drift::Constant { mu: 2.0 });
        assert_eq!(GbmVariant::HighFreq.obs_prob(), 0.4);
        assert_eq!(GbmVariant::HighFreq.drift(), Drift::Constant { mu: 2.0 });
        assert_eq!(GbmVariant::TimeDep.obs_prob(), 0.1);
        assert_eq!(GbmVariant::TimeDep.drift(), Drift::SinePlusOne);
        assert!(matches!("BS-Other".parse::<GbmVariant>(), Err(Error::Config(_))));
        assert_eq!("BS-HighFreq".parse::<GbmVariant>().unwrap(), GbmVariant::HighFreq);
    }

    #[test]
    fn gbm_dataset_shape() {
        let b = sample_gbm_dataset(&DatasetConfig::gbm(GbmVariant::TimeDep, 50, 3)).unwrap();
        assert_eq!(b.meta.grid_len, 101);
        assert_eq!(b.dim(), 1);
        assert!(b.paths.iter().all(|p| p.values[0] == vec![1.0]));
        assert_eq!(b.gbm_drift(), Some(Drift::SinePlusOne));
    }

    #[test]
    fn splits_partition_indices() {
        let s = make_split(1000, 0.2, 0.2).unwrap();
        assert_eq!(s.test.len(), 200);
        assert_eq!(s.val.len(), 160);
        assert_eq!(s.train.len(), 640);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(make_split(1, 0.5, 0.5).is_err());
    }

    #[test]
    fn same_config_same_bundle() {
        let cfg = DatasetConfig::gbm(GbmVariant::Base, 30, 17);
        assert_eq!(sample_gbm_dataset(&cfg).unwrap(), sample_gbm_dataset(&cfg).unwrap());
        let cfg = DatasetConfig::pendulum(10, 17);
        assert_eq!(sample_pendulum_dataset(&cfg).unwrap(), sample_pendulum_dataset(&cfg).unwrap());
    }

    #[test]
    fn persistence_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_pendulum_dataset(&DatasetConfig::pendulum(12, 5)).unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(b, back);
        for (p, q) in b.paths.iter().zip(&back.paths) {
            for (u, v) in p.values.iter().flatten().zip(q.values.iter().flatten()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let ok = r#"{"generator": {"kind": "gbm", "variant": "BS-Base"}, "n_paths": 10}"#;
        let cfg: DatasetConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.val_fraction, 0.2);
        let typo = r#"{"generator": {"kind": "gbm", "variant": "BS-Base", "sigmaa": 1}, "n_paths": 10}"#;
        assert!(serde_json::from_str::<DatasetConfig>(typo).is_err());
        let bad = r#"{"generator": {"kind": "gbm", "variant": "BS-Nope"}, "n_paths": 10}"#;
        assert!(serde_json::from_str::<DatasetConfig>(bad).is_err());
        let mut cfg = DatasetConfig::pendulum(10, 0);
        cfg.n_paths = 0;
        assert!(cfg.validate().is_err());
    }
}
