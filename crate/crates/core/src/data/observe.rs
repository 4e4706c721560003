use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Observation times (as grid indices), coordinate masks and input flags.
///
/// Index 0 is always present and fully observed. `input_flags[k]` decides
/// whether observation `k` is fed to the model; the loss ignores the flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub obs_indices: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
    pub input_flags: Vec<bool>,
}

impl ObservationSet {
    /// Fully observed set at the given grid indices, every flag on.
    pub fn full(obs_indices: Vec<usize>, d: usize) -> Result<Self> {
        let n = obs_indices.len();
        let set = Self {
            obs_indices,
            masks: vec![vec![true; d]; n],
            input_flags: vec![true; n],
        };
        set.validate(usize::MAX)?;
        Ok(set)
    }

    /// Total number of observations including the initial one.
    pub fn len(&self) -> usize {
        self.obs_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_indices.is_empty()
    }

    /// Number of observations after time 0.
    pub fn count(&self) -> usize {
        self.obs_indices.len().saturating_sub(1)
    }

    pub fn mask_f64(&self, k: usize) -> Vec<f64> {
        self.masks[k].iter().map(|m| if *m { 1.0 } else { 0.0 }).collect()
    }

    pub fn with_flags(&self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.len() {
            return Err(Error::Usage(format!(
                "{} flags for {} observations",
                flags.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        out.input_flags = flags;
        out.validate(usize::MAX)?;
        Ok(out)
    }

    pub fn validate(&self, grid_len: usize) -> Result<()> {
        let n = self.obs_indices.len();
        if n == 0 || self.obs_indices[0] != 0 {
            return Err(Error::Usage("observation sets must start at grid index 0".into()));
        }
        if self.masks.len() != n || self.input_flags.len() != n {
            return Err(Error::Usage(format!(
                "{} indices, {} masks, {} flags",
                n,
                self.masks.len(),
                self.input_flags.len()
            )));
        }
        if self.obs_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage("observation indices must increase".into()));
        }
        if self.obs_indices[n - 1] >= grid_len {
            return Err(Error::Usage(format!(
                "observation index {} outside a grid of {} points",
                self.obs_indices[n - 1],
                grid_len
            )));
        }
        if !self.masks[0].iter().all(|m| *m) || !self.input_flags[0] {
            return Err(Error::Usage("initial observation must be fully observed and used".into()));
        }
        if self.masks.iter().any(|m| !m.iter().any(|x| *x)) {
            return Err(Error::Usage("every observation needs an observed coordinate".into()));
        }
        Ok(())
    }

    /// Drops coordinates independently with probability `1 - keep`, keeping
    /// index 0 intact and at least one coordinate per observation.
    /// The shipped generators never call this; it exists for tests.
    pub fn randomize_masks(&mut self, keep: f64, seed: u64) {
        let mut rng = seed::rng_for(seed, &[seed::stream::MASK]);
        for mask in self.masks.iter_mut().skip(1) {
            for m in mask.iter_mut() {
                *m = rng.random_bool(keep.clamp(0.0, 1.0));
            }
            if !mask.iter().any(|x| *x) {
                let j = rng.random_range(0..mask.len());
                mask[j] = true;
            }
        }
    }
}

/// Index 0 plus each later grid index independently with probability `prob`.
/// With `include_last = false` the final grid point is never observed.
pub fn sample_observations(grid_len: usize, prob: f64, d: usize, include_last: bool, seed: u64) -> Result<ObservationSet> {
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(Error::Config(format!("observation probability {prob} not in (0, 1]")));
    }
    if grid_len < 2 {
        return Err(Error::Config(format!("grid of {grid_len} points is too short")));
    }
    let mut rng = seed::rng_for(seed, &[seed::stream::OBSERVATION]);
    let end = if include_last { grid_len } else { grid_len - 1 };
    let mut idx = vec![0];
    for i in 1..end {
        if rng.random_bool(prob) {
            idx.push(i);
        }
    }
    ObservationSet::full(idx, d)
}
