use crate::data::{ObservationSet, PathSample};
use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::model::{PredictionSeries, TapeSeries};

fn check_aligned(pre: usize, post: usize, obs: &ObservationSet, path: &PathSample) -> Result<()> {
    if pre != obs.len() || post != obs.len() {
        return Err(Error::Usage(format!(
            "{} pre-jump and {} post-jump predictions for {} observations",
            pre,
            post,
            obs.len()
        )));
    }
    obs.validate(path.len())
}

/// Observation loss of one path: the mean over observations after time 0 of
/// `(|M ⊙ (X - Y)| + |M ⊙ (X - Y⁻)|)²`. Input flags are ignored.
pub fn njode_loss(pred: &PredictionSeries, path: &PathSample, obs: &ObservationSet) -> Result<f64> {
    check_aligned(pred.pre_jump.len(), pred.post_jump.len(), obs, path)?;
    let n = obs.count();
    if n == 0 {
        return Ok(0.0);
    }
    let norm = |x: &[f64], y: &[f64], m: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(m)
            .map(|((a, b), w)| {
                let e = (a - b) * w;
                e * e
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut terms = Vec::with_capacity(n);
    for k in 1..obs.len() {
        let x = &path.values[obs.obs_indices[k]];
        let m = obs.mask_f64(k);
        let s = norm(x, &pred.post_jump[k], &m) + norm(x, &pred.pre_jump[k], &m);
        terms.push(s * s);
    }
    Ok(terms.iter().sum::<f64>() * (1.0 / n as f64))
}

/// [`njode_loss`] recorded on the tape, with identical arithmetic order.
pub fn njode_loss_on_tape(
    tape: &mut Tape,
    series: &TapeSeries,
    path: &PathSample,
    obs: &ObservationSet,
) -> Result<Var> {
    check_aligned(series.pre_jump.len(), series.post_jump.len(), obs, path)?;
    let n = obs.count();
    if n == 0 {
        return Ok(tape.scalar(0.0));
    }
    let mut terms = Vec::with_capacity(n);
    for k in 1..obs.len() {
        let x = tape.constant(path.values[obs.obs_indices[k]].clone());
        let m = obs.mask_f64(k);
        let post = tape.sub(x, series.post_jump[k])?;
        let post = tape.mul_const(post, &m)?;
        let pre = tape.sub(x, series.pre_jump[k])?;
        let pre = tape.mul_const(pre, &m)?;
        let (a, b) = (tape.norm(post), tape.norm(pre));
        let s = tape.add(a, b)?;
        terms.push(tape.square(s));
    }
    let all = tape.concat(&terms);
    let total = tape.sum(all);
    Ok(tape.scale(total, 1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_on_tape, forward_path, BoundModel, ModelConfig, ModelParams};

    fn series(pre: Vec<Vec<f64>>, post: Vec<Vec<f64>>) -> PredictionSeries {
        PredictionSeries {
            times: vec![],
            grid_values: vec![],
            pre_jump: pre,
            post_jump: post,
        }
    }

    fn two_point_path(x1: f64) -> (PathSample, ObservationSet) {
        let path = PathSample {
            times: vec![0.0, 1.0],
            values: vec![vec![0.0], vec![x1]],
        };
        (path, ObservationSet::full(vec![0, 1], 1).unwrap())
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let (path, obs) = two_point_path(3.0);
        let s = series(vec![vec![0.0], vec![3.0]], vec![vec![0.0], vec![3.0]]);
        assert_eq!(njode_loss(&s, &path, &obs).unwrap(), 0.0);
    }

    #[test]
    fn single_observation_arithmetic() {
        let (path, obs) = two_point_path(1.0);
        let s = series(vec![vec![9.0], vec![0.5]], vec![vec![9.0], vec![1.0]]);
        assert_eq!(njode_loss(&s, &path, &obs).unwrap(), 0.25);
    }

    #[test]
    fn masked_coordinates_are_ignored() {
        let path = PathSample {
            times: vec![0.0, 1.0],
            values: vec![vec![0.0, 0.0], vec![1.0, 5.0]],
        };
        let mut obs = ObservationSet::full(vec![0, 1], 2).unwrap();
        obs.masks[1] = vec![true, false];
        let s = series(vec![vec![0.0; 2], vec![1.0, -100.0]], vec![vec![0.0; 2], vec![1.0, 100.0]]);
        assert_eq!(njode_loss(&s, &path, &obs).unwrap(), 0.0);
    }

    #[test]
    fn misaligned_series_is_usage_error() {
        let (path, obs) = two_point_path(1.0);
        let s = series(vec![vec![0.0]], vec![vec![0.0], vec![1.0]]);
        assert!(matches!(njode_loss(&s, &path, &obs), Err(Error::Usage(_))));
    }

    /// The constant predictor minimizing the expected pre-jump loss of a
    /// two-outcome process is the mean of the outcomes.
    #[test]
    fn minimizer_is_the_conditional_expectation() {
        let outcomes = [0.0, 2.0];
        let loss_at = |y: f64| -> f64 {
            outcomes
                .iter()
                .map(|x| {
                    let (path, obs) = two_point_path(*x);
                    let s = series(vec![vec![0.0], vec![y]], vec![vec![0.0], vec![*x]]);
                    0.5 * njode_loss(&s, &path, &obs).unwrap()
                })
                .sum()
        };
        let (best, _) = (0..=2000)
            .map(|i| i as f64 * 1e-3)
            .map(|y| (y, loss_at(y)))
            .fold((f64::NAN, f64::INFINITY), |acc, (y, l)| if l < acc.1 { (y, l) } else { acc });
        assert!((best - 1.0).abs() <= 1e-3, "minimizer {best}");
    }

    #[test]
    fn tape_and_plain_losses_agree_bitwise() {
        let cfg = ModelConfig {
            d: 2,
            latent_dim: 4,
            hidden: vec![5],
            use_output_feedback: true,
            use_recurrent_jump: true,
            signature_level: 2,
            ode_substeps: 1,
        };
        let p = ModelParams::init(&cfg, 3).unwrap();
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let values = times.iter().map(|t| vec![t.cos(), 2.0 * t]).collect();
        let path = PathSample { times, values };
        let mut obs = ObservationSet::full(vec![0, 2, 5, 9], 2).unwrap();
        obs.masks[2] = vec![false, true];
        let obs = obs.with_flags(vec![true, false, true, true]).unwrap();
        let plain = njode_loss(&forward_path(&p, &path, &obs).unwrap(), &path, &obs).unwrap();
        let mut tape = Tape::new();
        let m = BoundModel::bind(&p, &mut tape);
        let s = forward_on_tape(&mut tape, &m, &path, &obs, false).unwrap();
        let l = njode_loss_on_tape(&mut tape, &s, &path, &obs).unwrap();
        assert_eq!(tape.value(l)[0].to_bits(), plain.to_bits());
    }

    #[test]
    fn only_initial_observation_gives_zero() {
        let path = PathSample {
            times: vec![0.0, 1.0],
            values: vec![vec![1.0], vec![2.0]],
        };
        let obs = ObservationSet::full(vec![0], 1).unwrap();
        let s = series(vec![vec![0.0]], vec![vec![1.0]]);
        assert_eq!(njode_loss(&s, &path, &obs).unwrap(), 0.0);
    }
}
