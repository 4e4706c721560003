use super::signature::SignatureAccumulator;
use super::{ModelConfig, ModelParams};
use crate::data::{ObservationSet, PathSample};
use crate::error::{Error, Result};
use crate::grad::{mlp_forward, BoundMlp, Tape, Var};

/// Model parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub encoder: BoundMlp,
    pub vectorfield: BoundMlp,
    pub readout: BoundMlp,
}

impl BoundModel {
    pub fn bind(params: &ModelParams, tape: &mut Tape) -> Self {
        Self {
            config: params.config.clone(),
            encoder: params.encoder.bind(tape),
            vectorfield: params.vectorfield.bind(tape),
            readout: params.readout.bind(tape),
        }
    }

    pub fn bind_frozen(params: &ModelParams, tape: &mut Tape) -> Self {
        Self {
            config: params.config.clone(),
            encoder: params.encoder.bind_frozen(tape),
            vectorfield: params.vectorfield.bind_frozen(tape),
            readout: params.readout.bind_frozen(tape),
        }
    }

    /// Parameter handles in [`ModelParams::to_flat`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.vectorfield.vars());
        v.extend(self.readout.vars());
        v
    }
}

/// Latent state between observations.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub h: Var,
    pub t: f64,
    /// Time of the last observation fed to the model.
    pub last_obs_time: f64,
    /// Most recent observed value per coordinate.
    pub last_obs_value: Vec<f64>,
    pub last_mask: Vec<f64>,
    signature: Option<SignatureAccumulator>,
}

impl LatentState {
    pub fn new(tape: &mut Tape, config: &ModelConfig) -> Self {
        let signature =
            (config.signature_level > 0).then(|| SignatureAccumulator::new(config.d + 1, config.signature_level));
        Self {
            h: tape.constant(vec![0.0; config.latent_dim]),
            t: 0.0,
            last_obs_time: 0.0,
            last_obs_value: vec![0.0; config.d],
            last_mask: vec![0.0; config.d],
            signature,
        }
    }
}

pub fn readout(tape: &mut Tape, model: &BoundModel, h: Var) -> Result<Var> {
    mlp_forward(tape, &model.readout, h)
}

/// Applies the jump network for an observation `x` with mask `mask` at the
/// current time. `pre_readout` is the readout of the pre-jump latent, reused
/// for output feedback when supplied.
pub fn encode_jump(
    tape: &mut Tape,
    model: &BoundModel,
    state: &mut LatentState,
    x: &[f64],
    mask: &[f64],
    pre_readout: Option<Var>,
) -> Result<()> {
    let cfg = &model.config;
    if x.len() != cfg.d || mask.len() != cfg.d {
        return Err(Error::Usage(format!(
            "observation of length {} with mask {} for a {}-dimensional model",
            x.len(),
            mask.len(),
            cfg.d
        )));
    }
    let t = state.t;
    for j in 0..cfg.d {
        if mask[j] != 0.0 {
            state.last_obs_value[j] = x[j];
        }
    }
    let masked: Vec<f64> = x.iter().zip(mask).map(|(a, m)| a * m).collect();
    let mut parts = vec![
        tape.constant(masked),
        tape.constant(mask.to_vec()),
        tape.constant(vec![t, t - state.last_obs_time]),
    ];
    if cfg.use_recurrent_jump {
        parts.push(state.h);
    }
    if cfg.use_output_feedback {
        let y = match pre_readout {
            Some(y) => y,
            None => readout(tape, model, state.h)?,
        };
        parts.push(y);
    }
    if let Some(sig) = state.signature.as_mut() {
        let mut point = Vec::with_capacity(cfg.d + 1);
        point.push(t);
        point.extend_from_slice(&state.last_obs_value);
        sig.push(&point)?;
        parts.push(tape.constant(sig.features()));
    }
    let input = tape.concat(&parts);
    state.h = mlp_forward(tape, &model.encoder, input)?;
    check_finite(tape, state.h, t)?;
    state.last_obs_time = t;
    state.last_mask = mask.to_vec();
    Ok(())
}

/// One explicit Euler step of length `dt` of the latent vector field.
pub fn ode_step(tape: &mut Tape, model: &BoundModel, state: &mut LatentState, dt: f64) -> Result<()> {
    let cfg = &model.config;
    let t = state.t;
    let last: Vec<f64> = state
        .last_obs_value
        .iter()
        .zip(&state.last_mask)
        .map(|(a, m)| a * m)
        .collect();
    let mut parts = vec![
        state.h,
        tape.constant(vec![t, t - state.last_obs_time]),
        tape.constant(last),
    ];
    if cfg.use_output_feedback {
        parts.push(readout(tape, model, state.h)?);
    }
    let input = tape.concat(&parts);
    let f = mlp_forward(tape, &model.vectorfield, input)?;
    state.h = tape.axpy(state.h, dt, f)?;
    state.t = t + dt;
    check_finite(tape, state.h, state.t)
}

fn check_finite(tape: &Tape, h: Var, time: f64) -> Result<()> {
    if tape.value(h).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Inference {
            time,
            message: "latent state is not finite".into(),
        })
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct TapeSeries {
    /// Prediction just before each observation (index 0 included).
    pub pre_jump: Vec<Var>,
    /// Prediction just after each observation; equals `pre_jump` when the
    /// observation was not fed to the model.
    pub post_jump: Vec<Var>,
    /// Right-continuous prediction at every grid time, if requested.
    pub grid: Vec<Var>,
}

/// Runs the model along one path. Observations with a false input flag are
/// skipped by the jump network but still receive pre/post predictions.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &BoundModel,
    path: &PathSample,
    obs: &ObservationSet,
    record_grid: bool,
) -> Result<TapeSeries> {
    let cfg = &model.config;
    obs.validate(path.len())?;
    if path.dim() != cfg.d {
        return Err(Error::Usage(format!(
            "path dimension {} does not match model dimension {}",
            path.dim(),
            cfg.d
        )));
    }
    let mut state = LatentState::new(tape, cfg);
    let mut series = TapeSeries {
        pre_jump: Vec::with_capacity(obs.len()),
        post_jump: Vec::with_capacity(obs.len()),
        grid: Vec::with_capacity(if record_grid { path.len() } else { 0 }),
    };
    let mut next_obs = 0;
    for i in 0..path.len() {
        if i > 0 {
            let dt = (path.times[i] - path.times[i - 1]) / cfg.ode_substeps as f64;
            for _ in 0..cfg.ode_substeps {
                ode_step(tape, model, &mut state, dt)?;
            }
        }
        state.t = path.times[i];
        let mut current = None;
        if next_obs < obs.len() && obs.obs_indices[next_obs] == i {
            let k = next_obs;
            next_obs += 1;
            let pre = readout(tape, model, state.h)?;
            let post = if obs.input_flags[k] {
                encode_jump(tape, model, &mut state, &path.values[i], &obs.mask_f64(k), Some(pre))?;
                readout(tape, model, state.h)?
            } else {
                pre
            };
            series.pre_jump.push(pre);
            series.post_jump.push(post);
            current = Some(post);
        }
        if record_grid {
            let y = match current {
                Some(y) => y,
                None => readout(tape, model, state.h)?,
            };
            series.grid.push(y);
        }
    }
    Ok(series)
}

/// Predictions of a forward pass as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    pub times: Vec<f64>,
    pub grid_values: Vec<Vec<f64>>,
    pub pre_jump: Vec<Vec<f64>>,
    pub post_jump: Vec<Vec<f64>>,
}

/// Untracked forward pass with predictions at every grid time.
pub fn forward_path(params: &ModelParams, path: &PathSample, obs: &ObservationSet) -> Result<PredictionSeries> {
    let mut tape = Tape::new();
    let model = BoundModel::bind_frozen(params, &mut tape);
    let s = forward_on_tape(&mut tape, &model, path, obs, true)?;
    let values = |vs: &[Var]| vs.iter().map(|v| tape.value(*v).to_vec()).collect::<Vec<_>>();
    Ok(PredictionSeries {
        times: path.times.clone(),
        grid_values: values(&s.grid),
        pre_jump: values(&s.pre_jump),
        post_jump: values(&s.post_jump),
    })
}
