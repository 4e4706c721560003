//! Geometric Brownian motion sampled with Euler-Maruyama.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PathSample;
use crate::error::{Error, Result};
use crate::seed;

/// Drift coefficient `μ(t)` of `dX = μ(t) X dt + σ X dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Constant { mu: f64 },
    /// `μ(t) = sin(2πt) + 1`
    SinePlusOne,
}

impl Drift {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Drift::Constant { mu } => *mu,
            Drift::SinePlusOne => (2.0 * PI * t).sin() + 1.0,
        }
    }

    /// `∫_a^b μ(u) du`
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Drift::Constant { mu } => mu * (b - a),
            Drift::SinePlusOne => (b - a) + ((2.0 * PI * a).cos() - (2.0 * PI * b).cos()) / (2.0 * PI),
        }
    }
}

/// `X_{k+1} = X_k + μ(t_k) X_k dt + σ X_k √dt Z_k` on `n_steps + 1` grid points.
pub fn gbm_euler_path(x0: f64, drift: &Drift, sigma: f64, dt: f64, n_steps: usize, seed: u64) -> Result<PathSample> {
    let mut rng = seed::rng_for(seed, &[seed::stream::PATH]);
    gbm_euler_path_with(x0, drift, sigma, dt, n_steps, &mut rng)
}

pub(crate) fn gbm_euler_path_with<R: Rng>(
    x0: f64,
    drift: &Drift,
    sigma: f64,
    dt: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<PathSample> {
    if !(dt > 0.0) || !(x0 > 0.0) || !(sigma >= 0.0) {
        return Err(Error::Config(format!(
            "gbm needs dt > 0, x0 > 0, sigma >= 0; got dt={dt}, x0={x0}, sigma={sigma}"
        )));
    }
    let sqrt_dt = dt.sqrt();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    times.push(0.0);
    values.push(vec![x]);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let z: f64 = rng.sample(StandardNormal);
        x = x + drift.at(t) * x * dt + sigma * x * sqrt_dt * z;
        if !x.is_finite() {
            return Err(Error::Generation {
                step: k,
                message: format!("value became {x}"),
            });
        }
        times.push((k + 1) as f64 * dt);
        values.push(vec![x]);
    }
    Ok(PathSample { times, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_recursion() {
        let p = gbm_euler_path(1.0, &Drift::Constant { mu: 2.0 }, 0.0, 0.01, 100, 3).unwrap();
        let mut x = 1.0;
        for v in &p.values[1..] {
            x *= 1.0 + 0.02;
            assert!((v[0] - x).abs() < 1e-12 * x);
        }
    }

    #[test]
    fn time_dependent_noiseless_matches_quadrature() {
        let drift = Drift::SinePlusOne;
        let p = gbm_euler_path(1.0, &drift, 0.0, 0.01, 100, 0).unwrap();
        // Trapezoidal quadrature of the drift on a fine grid.
        let n = 100_000;
        let h = 1.0 / n as f64;
        let integral: f64 = (0..n).map(|i| 0.5 * h * (drift.at(i as f64 * h) + drift.at((i + 1) as f64 * h))).sum();
        assert!((integral - drift.integral(0.0, 1.0)).abs() < 1e-9);
        let ratio = p.values[100][0] / p.values[0][0];
        assert!((ratio / integral.exp() - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn deterministic_given_seed() {
        let d = Drift::Constant { mu: 2.0 };
        let a = gbm_euler_path(1.0, &d, 0.3, 0.01, 100, 42).unwrap();
        let b = gbm_euler_path(1.0, &d, 0.3, 0.01, 100, 42).unwrap();
        let c = gbm_euler_path(1.0, &d, 0.3, 0.01, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_parameters() {
        let d = Drift::Constant { mu: 2.0 };
        assert!(gbm_euler_path(0.0, &d, 0.3, 0.01, 10, 0).is_err());
        assert!(gbm_euler_path(1.0, &d, -0.3, 0.01, 10, 0).is_err());
        assert!(gbm_euler_path(1.0, &d, 0.3, 0.0, 10, 0).is_err());
    }
}
