use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// How the probability of feeding an observation to the model evolves
/// over training epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Always,
    Never,
    Fixed { p: f64 },
    /// `p(E) = max(0, 1 - E / e0)`
    LinearDecay { e0: f64 },
    /// Used observations are chosen by a renewal walk with `Exp(lambda)` gaps.
    ExponentialGap { lambda: f64 },
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleSpec::Fixed { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::Config(format!("fixed schedule p = {p} not in [0, 1]")))
            }
            ScheduleSpec::LinearDecay { e0 } if !(e0 > 0.0 && e0.is_finite()) => {
                Err(Error::Config(format!("linear decay horizon {e0} must be positive")))
            }
            ScheduleSpec::ExponentialGap { lambda } if !(lambda > 0.0) => {
                Err(Error::Config(format!("exponential gap rate {lambda} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Input probability at a training epoch (counted from 0).
pub fn schedule_p(epoch: usize, spec: &ScheduleSpec) -> Result<f64> {
    spec.validate()?;
    match *spec {
        ScheduleSpec::Always => Ok(1.0),
        ScheduleSpec::Never => Ok(0.0),
        ScheduleSpec::Fixed { p } => Ok(p),
        ScheduleSpec::LinearDecay { e0 } => Ok((1.0 - epoch as f64 / e0).max(0.0)),
        ScheduleSpec::ExponentialGap { .. } => Err(Error::Config(
            "the exponential-gap schedule has no input probability".into(),
        )),
    }
}

/// Flag 0 is always set; later flags are i.i.d. Bernoulli(p).
pub fn bernoulli_gating(count: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = seed::rng_for(seed, &[seed::stream::GATING]);
    let p = p.clamp(0.0, 1.0);
    (0..count).map(|k| k == 0 || rng.random_bool(p)).collect()
}

/// Renewal walk: after each used observation at `t_i` draw `e ~ Exp(lambda)`
/// and use the first later observation with `t_k - t_i >= e`.
pub fn exponential_gap_gating(obs_times: &[f64], lambda: f64, seed: u64) -> Result<Vec<bool>> {
    ScheduleSpec::ExponentialGap { lambda }.validate()?;
    let exp = Exp::new(lambda).map_err(|e| Error::Config(format!("exponential gap rate {lambda}: {e}")))?;
    if obs_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("observation times must increase".into()));
    }
    let mut rng = seed::rng_for(seed, &[seed::stream::GATING]);
    let mut flags = vec![false; obs_times.len()];
    let mut i = 0;
    while i < obs_times.len() {
        flags[i] = true;
        let e: f64 = exp.sample(&mut rng);
        match (i + 1..obs_times.len()).find(|&k| obs_times[k] - obs_times[i] >= e) {
            Some(k) => i = k,
            None => break,
        }
    }
    Ok(flags)
}

/// Input flags for one path in one epoch.
pub fn draw_flags(spec: &ScheduleSpec, epoch: usize, obs_times: &[f64], seed: u64) -> Result<Vec<bool>> {
    match *spec {
        ScheduleSpec::ExponentialGap { lambda } => exponential_gap_gating(obs_times, lambda, seed),
        _ => Ok(bernoulli_gating(obs_times.len(), schedule_p(epoch, spec)?, seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_values() {
        let s = ScheduleSpec::LinearDecay { e0: 100.0 };
        assert_eq!(schedule_p(0, &s).unwrap(), 1.0);
        assert_eq!(schedule_p(50, &s).unwrap(), 0.5);
        assert_eq!(schedule_p(100, &s).unwrap(), 0.0);
        assert_eq!(schedule_p(150, &s).unwrap(), 0.0);
    }

    #[test]
    fn invalid_schedules() {
        assert!(schedule_p(0, &ScheduleSpec::Fixed { p: 1.5 }).is_err());
        assert!(schedule_p(0, &ScheduleSpec::LinearDecay { e0: 0.0 }).is_err());
        assert!(schedule_p(0, &ScheduleSpec::ExponentialGap { lambda: 1.0 }).is_err());
        assert!(ScheduleSpec::ExponentialGap { lambda: -1.0 }.validate().is_err());
        let unknown: std::result::Result<ScheduleSpec, _> = serde_json::from_str(r#"{"kind":"cosine"}"#);
        assert!(unknown.is_err());
    }

    #[test]
    fn degenerate_bernoulli() {
        assert!(bernoulli_gating(20, 1.0, 3).iter().all(|f| *f));
        let never = bernoulli_gating(20, 0.0, 3);
        assert!(never[0] && never[1..].iter().all(|f| !f));
        assert_eq!(bernoulli_gating(20, 0.4, 9), bernoulli_gating(20, 0.4, 9));
    }

    #[test]
    fn bernoulli_mean_within_three_se() {
        let draws = 100_000;
        let used: usize = (0..1000u64)
            .map(|s| bernoulli_gating(101, 0.5, s)[1..].iter().filter(|f| **f).count())
            .sum();
        let mean = used as f64 / draws as f64;
        let se = (0.25 / draws as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn exponential_gap_limits() {
        assert_eq!(exponential_gap_gating(&[0.0], 2.0, 1).unwrap(), vec![true]);
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        assert!(exponential_gap_gating(&times, 1e12, 4).unwrap().iter().all(|f| *f));
        assert!(exponential_gap_gating(&times, 0.0, 4).is_err());
        assert!(exponential_gap_gating(&[0.0, 0.0], 1.0, 4).is_err());
    }

    /// With spacing h the index jump is geometric with ratio exp(-lambda h);
    /// the expected usage of each observation follows by renewal recursion.
    #[test]
    fn exponential_gap_matches_renewal_recursion() {
        let (n, h, lambda) = (30usize, 0.1, 4.0);
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let q = (-lambda * h).exp();
        let mut u = vec![0.0; n + 1];
        u[0] = 1.0;
        for j in 1..=n {
            u[j] = (1..=j).map(|k| u[j - k] * q.powi(k as i32 - 1) * (1.0 - q)).sum();
        }
        let expected = u[1..].iter().sum::<f64>() / n as f64;
        let runs = 20_000;
        let fractions: Vec<f64> = (0..runs)
            .map(|s| {
                let f = exponential_gap_gating(&times, lambda, s).unwrap();
                f[1..].iter().filter(|x| **x).count() as f64 / n as f64
            })
            .collect();
        let mean = fractions.iter().sum::<f64>() / runs as f64;
        let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean}, expected {expected}, se {se}");
    }
}
