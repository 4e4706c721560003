//! Double pendulum in Hamiltonian coordinates and a fixed-step RK4 integrator.

use serde::{Deserialize, Serialize};

use super::PathSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumConstants {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Default for PendulumConstants {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
        }
    }
}

/// Angles measured from the downward vertical and their generalized momenta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub alpha1: f64,
    pub alpha2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PendulumState {
    pub fn to_array(self) -> [f64; 4] {
        [self.alpha1, self.alpha2, self.p1, self.p2]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [a1, a2, p1, p2] => Ok(Self {
                alpha1: *a1,
                alpha2: *a2,
                p1: *p1,
                p2: *p2,
            }),
            _ => Err(Error::Usage(format!("pendulum state needs 4 values, got {}", x.len()))),
        }
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Time derivative of the state.
pub fn pendulum_rhs(s: PendulumState, c: &PendulumConstants) -> Result<PendulumState> {
    if !s.is_finite() {
        return Err(Error::Usage(format!("non-finite pendulum state {:?}", s)));
    }
    let PendulumConstants { m1, m2, l1, l2, g } = *c;
    let delta = s.alpha1 - s.alpha2;
    let (sin_d, cos_d) = delta.sin_cos();
    let a0 = m1 + m2 * sin_d * sin_d;
    let a1 = s.p1 * s.p2 * sin_d / (l1 * l2 * a0);
    let a2 = (s.p1 * s.p1 * m2 * l2 * l2 - 2.0 * s.p1 * s.p2 * m2 * l1 * l2 * cos_d
        + s.p2 * s.p2 * (m1 + m2) * l1 * l1)
        * (2.0 * delta).sin()
        / (2.0 * l1 * l1 * l2 * l2 * a0 * a0);

    Ok(PendulumState {
        alpha1: (s.p1 * l2 - s.p2 * l1 * cos_d) / (l1 * l1 * l2 * a0),
        alpha2: (s.p2 * (m1 + m2) * l1 - s.p1 * m2 * l2 * cos_d) / (m2 * l1 * l2 * l2 * a0),
        p1: -(m1 + m2) * g * l1 * s.alpha1.sin() - a1 + a2,
        p2: -m2 * g * l2 * s.alpha2.sin() + a1 - a2,
    })
}

/// Total energy; conserved by the exact flow of [`pendulum_rhs`].
pub fn hamiltonian(s: PendulumState, c: &PendulumConstants) -> f64 {
    let PendulumConstants { m1, m2, l1, l2, g } = *c;
    let delta = s.alpha1 - s.alpha2;
    let a0 = m1 + m2 * delta.sin().powi(2);
    let kinetic = (m2 * l2 * l2 * s.p1 * s.p1 + (m1 + m2) * l1 * l1 * s.p2 * s.p2
        - 2.0 * m2 * l1 * l2 * s.p1 * s.p2 * delta.cos())
        / (2.0 * m2 * l1 * l1 * l2 * l2 * a0);
    let potential = -(m1 + m2) * g * l1 * s.alpha1.cos() - m2 * g * l2 * s.alpha2.cos();
    kinetic + potential
}

/// Classical fixed-step fourth-order Runge-Kutta; returns `n_steps + 1` points.
pub fn rk4_integrate<F>(rhs: F, x0: &[f64], step: f64, n_steps: usize) -> Result<PathSample>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) || n_steps == 0 {
        return Err(Error::Config(format!(
            "rk4 needs step > 0 and n_steps >= 1, got {step} and {n_steps}"
        )));
    }
    let d = x0.len();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    values.push(x0.to_vec());
    let mut x = x0.to_vec();
    let shifted = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    for n in 0..n_steps {
        let t = n as f64 * step;
        let fail = |e: Error| Error::Generation {
            step: n,
            message: e.to_string(),
        };
        let k1 = rhs(t, &x).map_err(fail)?;
        let k2 = rhs(t + step / 2.0, &shifted(&x, &k1, step / 2.0)).map_err(fail)?;
        let k3 = rhs(t + step / 2.0, &shifted(&x, &k2, step / 2.0)).map_err(fail)?;
        let k4 = rhs(t + step, &shifted(&x, &k3, step)).map_err(fail)?;
        for i in 0..d {
            x[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Generation {
                step: n,
                message: format!("coordinate {i} became {}", x[i]),
            });
        }
        times.push((n + 1) as f64 * step);
        values.push(x.clone());
    }
    Ok(PathSample { times, values })
}

/// Integrates the pendulum from `x0` on `[0, n_steps * step]`.
pub fn pendulum_path(x0: PendulumState, c: &PendulumConstants, step: f64, n_steps: usize) -> Result<PathSample> {
    rk4_integrate(
        |_, x| {
            let s = PendulumState::from_slice(x)?;
            Ok(pendulum_rhs(s, c)?.to_array().to_vec())
        },
        &x0.to_array(),
        step,
        n_steps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Re-evaluates the equations term by term, without the shared subexpressions.
    fn rhs_oracle(s: [f64; 4], c: &PendulumConstants) -> [f64; 4] {
        let [a1, a2, p1, p2] = s;
        let (m1, m2, l1, l2, g) = (c.m1, c.m2, c.l1, c.l2, c.g);
        let big_a0 = m1 + m2 * (a1 - a2).sin() * (a1 - a2).sin();
        let big_a1 = (p1 * p2 * (a1 - a2).sin()) / (l1 * l2 * big_a0);
        let num = p1.powi(2) * m2 * l2.powi(2) - 2.0 * p1 * p2 * m2 * l1 * l2 * (a1 - a2).cos()
            + p2.powi(2) * (m1 + m2) * l1.powi(2);
        let big_a2 = num * (2.0 * (a1 - a2)).sin() / (2.0 * l1.powi(2) * l2.powi(2) * big_a0.powi(2));
        [
            (p1 * l2 - p2 * l1 * (a1 - a2).cos()) / (l1.powi(2) * l2 * big_a0),
            (p2 * (m1 + m2) * l1 - p1 * m2 * l2 * (a1 - a2).cos()) / (m2 * l1 * l2.powi(2) * big_a0),
            -(m1 + m2) * g * l1 * a1.sin() - big_a1 + big_a2,
            -m2 * g * l2 * a2.sin() + big_a1 - big_a2,
        ]
    }

    #[test]
    fn upright_equilibrium() {
        let s = PendulumState::from_slice(&[PI, PI, 0.0, 0.0]).unwrap();
        let d = pendulum_rhs(s, &PendulumConstants::default()).unwrap().to_array();
        for v in d {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn horizontal_configuration() {
        let s = PendulumState::from_slice(&[PI / 2.0, PI / 2.0, 0.0, 0.0]).unwrap();
        let d = pendulum_rhs(s, &PendulumConstants::default()).unwrap().to_array();
        let want = [0.0, 0.0, -19.62, -9.81];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_term_by_term_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = PendulumConstants {
            m1: 1.3,
            m2: 0.7,
            l1: 0.9,
            l2: 1.4,
            g: 9.81,
        };
        for _ in 0..200 {
            let x: [f64; 4] = std::array::from_fn(|_| rng.random_range(-4.0..4.0));
            let got = pendulum_rhs(PendulumState::from_slice(&x).unwrap(), &c).unwrap().to_array();
            let want = rhs_oracle(x, &c);
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hamiltonian_gradient_drives_the_flow() {
        // dα/dt = ∂H/∂p and dp/dt = -∂H/∂α, checked with central differences.
        let c = PendulumConstants::default();
        let x = [2.9, 3.4, 0.8, -1.1];
        let d = pendulum_rhs(PendulumState::from_slice(&x).unwrap(), &c).unwrap().to_array();
        let h = 1e-6;
        let partial = |i: usize| {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            (hamiltonian(PendulumState::from_slice(&a).unwrap(), &c)
                - hamiltonian(PendulumState::from_slice(&b).unwrap(), &c))
                / (2.0 * h)
        };
        assert!((d[0] - partial(2)).abs() < 1e-7);
        assert!((d[1] - partial(3)).abs() < 1e-7);
        assert!((d[2] + partial(0)).abs() < 1e-7);
        assert!((d[3] + partial(1)).abs() < 1e-7);
    }

    #[test]
    fn non_finite_state_rejected() {
        let s = PendulumState::from_slice(&[f64::NAN, 0.0, 0.0, 0.0]).unwrap();
        assert!(pendulum_rhs(s, &PendulumConstants::default()).is_err());
    }

    #[test]
    fn zero_field_gives_constant_path() {
        let p = rk4_integrate(|_, x| Ok(vec![0.0; x.len()]), &[1.5, -2.0], 0.1, 10).unwrap();
        assert_eq!(p.times.len(), 11);
        assert!(p.values.iter().all(|v| v == &vec![1.5, -2.0]));
    }

    #[test]
    fn exponential_growth() {
        let p = rk4_integrate(|_, x| Ok(x.to_vec()), &[1.0], 0.025, 100).unwrap();
        let last = p.values[100][0];
        let want = 2.5_f64.exp();
        assert!(((last - want) / want).abs() < 1e-8, "{last} vs {want}");
        assert!((p.times[100] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_a_generation_error() {
        let err = rk4_integrate(|_, x| Ok(x.iter().map(|v| v * v * 1e200).collect()), &[1e100], 1.0, 5)
            .unwrap_err();
        assert!(matches!(err, Error::Generation { step: 0, .. }), "{err}");
    }

    #[test]
    fn invalid_step() {
        assert!(rk4_integrate(|_, x| Ok(x.to_vec()), &[1.0], 0.0, 5).is_err());
        assert!(rk4_integrate(|_, x| Ok(x.to_vec()), &[1.0], 0.1, 0).is_err());
    }
}
