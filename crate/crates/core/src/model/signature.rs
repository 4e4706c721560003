//! Truncated signatures of piecewise-linear paths, built segment by segment
//! with the tensor-algebra (Chen) product.
//!
//! A truncated tensor is stored as one flat vector per level `k = 1..=L`
//! holding `n^k` coefficients in row-major (lexicographic) word order; the
//! level-0 coefficient is the implicit constant 1.

use crate::error::{Error, Result};

/// Number of signature coordinates for channel count `n` up to `level`.
pub fn signature_dim(n: usize, level: usize) -> usize {
    (1..=level).map(|k| n.pow(k as u32)).sum()
}

/// Truncated tensor-algebra element with unit level-0 term.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    channels: usize,
    levels: Vec<Vec<f64>>,
}

impl TruncatedTensor {
    pub fn identity(channels: usize, level: usize) -> Self {
        let levels = (1..=level).map(|k| vec![0.0; channels.pow(k as u32)]).collect();
        Self { channels, levels }
    }

    /// Signature of the straight segment with increment `v`: level k is `v^{⊗k} / k!`.
    pub fn segment(v: &[f64], level: usize) -> Self {
        let n = v.len();
        let mut levels: Vec<Vec<f64>> = Vec::with_capacity(level);
        if level >= 1 {
            levels.push(v.to_vec());
        }
        for k in 2..=level {
            let prev = &levels[k - 2];
            let mut next = Vec::with_capacity(prev.len() * n);
            for a in prev {
                for b in v {
                    next.push(a * b / k as f64);
                }
            }
            levels.push(next);
        }
        Self { channels: n, levels }
    }

    pub fn level(&self) -> usize {
        self.levels.len()
    }

    pub fn level_terms(&self, k: usize) -> &[f64] {
        &self.levels[k - 1]
    }

    /// `self ⊗ other`, truncated at the common level.
    pub fn chen(&self, other: &TruncatedTensor) -> TruncatedTensor {
        assert_eq!(self.channels, other.channels);
        let level = self.level().min(other.level());
        let mut out = TruncatedTensor::identity(self.channels, level);
        for k in 1..=level {
            let dst = &mut out.levels[k - 1];
            // i = 0 and i = k terms (unit level-0 on one side)
            for (d, (a, b)) in dst.iter_mut().zip(self.levels[k - 1].iter().zip(&other.levels[k - 1])) {
                *d = a + b;
            }
            for i in 1..k {
                let left = &self.levels[i - 1];
                let right = &other.levels[k - i - 1];
                let stride = right.len();
                for (ia, a) in left.iter().enumerate() {
                    let row = &mut dst[ia * stride..(ia + 1) * stride];
                    for (r, b) in row.iter_mut().zip(right) {
                        *r += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.levels.iter().flatten().copied().collect()
    }
}

/// Signature of the linear interpolation of `points`, levels `1..=level` concatenated.
pub fn truncated_signature(points: &[Vec<f64>], level: usize) -> Result<Vec<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Usage("signature of an empty sequence".into()))?;
    if !(1..=3).contains(&level) {
        return Err(Error::Config(format!("signature level {level} not in 1..=3")));
    }
    let mut acc = SignatureAccumulator::new(first.len(), level);
    for p in points {
        acc.push(p)?;
    }
    Ok(acc.features())
}

/// Running signature of a stream of points.
#[derive(Debug, Clone)]
pub struct SignatureAccumulator {
    sig: TruncatedTensor,
    last: Option<Vec<f64>>,
}

impl SignatureAccumulator {
    pub fn new(channels: usize, level: usize) -> Self {
        Self {
            sig: TruncatedTensor::identity(channels, level),
            last: None,
        }
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.sig.channels {
            return Err(Error::Config(format!(
                "signature point has {} channels, expected {}",
                point.len(),
                self.sig.channels
            )));
        }
        if let Some(last) = &self.last {
            let inc: Vec<f64> = point.iter().zip(last).map(|(a, b)| a - b).collect();
            self.sig = self.sig.chen(&TruncatedTensor::segment(&inc, self.sig.level()));
        }
        self.last = Some(point.to_vec());
        Ok(())
    }

    pub fn features(&self) -> Vec<f64> {
        self.sig.flatten()
    }
}
