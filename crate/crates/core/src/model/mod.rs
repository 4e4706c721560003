//! The path-dependent neural jump ODE: a jump network applied at used
//! observations, a neural vector field integrated between them, and a
//! readout producing the prediction.
//!
//! Network inputs, in order:
//!
//! * jump network: masked observation (d), mask (d), t, t - τ,
//!   [H⁻ (d_H) if recurrent], [readout(H⁻) (d) if output feedback],
//!   [signature features if level > 0]
//! * vector field: H (d_H), t, t - τ, masked last observation (d),
//!   [readout(H) (d) if output feedback]
//! * readout: H (d_H)
//!
//! Checkpoints are JSON documents tagged with [`CHECKPOINT_SCHEMA`].

mod forward;
pub mod signature;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use forward::{
    encode_jump, forward_on_tape, forward_path, ode_step, readout, BoundModel, LatentState, PredictionSeries,
    TapeSeries,
};
pub use signature::{signature_dim, truncated_signature, SignatureAccumulator};

use crate::error::{Error, Result};
use crate::grad::{Layer, MlpParams};
use crate::seed;

pub const CHECKPOINT_SCHEMA: &str = "pdnjode-checkpoint/v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Process dimension.
    pub d: usize,
    pub latent_dim: usize,
    /// Hidden widths shared by all three networks.
    pub hidden: Vec<usize>,
    pub use_output_feedback: bool,
    pub use_recurrent_jump: bool,
    /// 0 disables signature features.
    pub signature_level: usize,
    /// Euler sub-steps per grid interval.
    pub ode_substeps: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.latent_dim == 0 {
            return Err(Error::Config("d and latent_dim must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths {:?} contain zero", self.hidden)));
        }
        if self.signature_level > 3 {
            return Err(Error::Config(format!(
                "signature level {} not supported (0..=3)",
                self.signature_level
            )));
        }
        if self.ode_substeps == 0 {
            return Err(Error::Config("ode_substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn signature_features(&self) -> usize {
        signature_dim(self.d + 1, self.signature_level)
    }

    pub fn jump_input_dim(&self) -> usize {
        let mut n = 2 * self.d + 2 + self.signature_features();
        if self.use_recurrent_jump {
            n += self.latent_dim;
        }
        if self.use_output_feedback {
            n += self.d;
        }
        n
    }

    /// Column where the feedback block starts in the jump network input.
    fn jump_feedback_offset(&self) -> usize {
        2 * self.d + 2 + if self.use_recurrent_jump { self.latent_dim } else { 0 }
    }

    pub fn vectorfield_input_dim(&self) -> usize {
        self.latent_dim + 2 + self.d + if self.use_output_feedback { self.d } else { 0 }
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }
}

/// Trainable parameters of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: MlpParams,
    pub vectorfield: MlpParams,
    pub readout: MlpParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    schema: String,
    #[serde(flatten)]
    params: ModelParams,
}

impl ModelParams {
    /// Fan-in uniform weights and zero biases; deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed, &[seed::stream::INIT]);
        let encoder = MlpParams::init(&config.sizes(config.jump_input_dim(), config.latent_dim), &mut rng)?;
        let vectorfield = MlpParams::init(
            &config.sizes(config.vectorfield_input_dim(), config.latent_dim),
            &mut rng,
        )?;
        let readout = MlpParams::init(&config.sizes(config.latent_dim, config.d), &mut rng)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            vectorfield,
            readout,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            encoder: MlpParams::zeros(&config.sizes(config.jump_input_dim(), config.latent_dim))?,
            vectorfield: MlpParams::zeros(&config.sizes(config.vectorfield_input_dim(), config.latent_dim))?,
            readout: MlpParams::zeros(&config.sizes(config.latent_dim, config.d))?,
        })
    }

    /// Checks the three networks against the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        for (name, net, input, output) in [
            ("encoder", &self.encoder, c.jump_input_dim(), c.latent_dim),
            ("vectorfield", &self.vectorfield, c.vectorfield_input_dim(), c.latent_dim),
            ("readout", &self.readout, c.latent_dim, c.d),
        ] {
            net.validate()?;
            if net.input_dim() != input || net.output_dim() != output {
                return Err(Error::Config(format!(
                    "{name} maps {} -> {}, configuration needs {} -> {}",
                    net.input_dim(),
                    net.output_dim(),
                    input,
                    output
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.vectorfield.num_params() + self.readout.num_params()
    }

    /// Encoder, vector field and readout parameters, in that order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.encoder.write_flat(&mut out);
        self.vectorfield.write_flat(&mut out);
        self.readout.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut pos = self.encoder.read_flat(flat)?;
        pos += self.vectorfield.read_flat(&flat[pos..])?;
        self.readout.read_flat(&flat[pos..])?;
        Ok(())
    }

    /// Output-feedback model that reproduces `base` exactly: identical
    /// weights with zero columns for the feedback inputs.
    pub fn with_zeroed_feedback(base: &ModelParams) -> Result<Self> {
        if base.config.use_output_feedback {
            return Err(Error::Usage("model already uses output feedback".into()));
        }
        let mut config = base.config.clone();
        config.use_output_feedback = true;
        let d = config.d;
        let encoder = insert_zero_columns(&base.encoder, config.jump_feedback_offset(), d);
        let vectorfield = insert_zero_columns(&base.vectorfield, base.config.vectorfield_input_dim(), d);
        let out = Self {
            config,
            encoder,
            vectorfield,
            readout: base.readout.clone(),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            params: self.clone(),
        };
        let text = serde_json::to_string(&doc)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Config(format!("unsupported checkpoint schema {:?}", doc.schema)));
        }
        doc.params.validate()?;
        Ok(doc.params)
    }
}

fn insert_zero_columns(net: &MlpParams, at: usize, count: usize) -> MlpParams {
    let mut out = net.clone();
    let first = &net.layers[0];
    let n_in = first.n_in + count;
    let mut weight = Vec::with_capacity(first.n_out * n_in);
    for row in first.weight.chunks_exact(first.n_in) {
        weight.extend_from_slice(&row[..at]);
        weight.extend(std::iter::repeat_n(0.0, count));
        weight.extend_from_slice(&row[at..]);
    }
    out.layers[0] = Layer {
        n_in,
        n_out: first.n_out,
        weight,
        bias: first.bias.clone(),
    };
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(of: bool, rec: bool, sig: usize) -> ModelConfig {
        ModelConfig {
            d: 2,
            latent_dim: 5,
            hidden: vec![6],
            use_output_feedback: of,
            use_recurrent_jump: rec,
            signature_level: sig,
            ode_substeps: 1,
        }
    }

    #[test]
    fn network_dimensions_chain() {
        for of in [false, true] {
            for rec in [false, true] {
                for sig in 0..=3 {
                    let p = ModelParams::init(&small_config(of, rec, sig), 1).unwrap();
                    p.validate().unwrap();
                }
            }
        }
        let c = small_config(true, true, 3);
        assert_eq!(c.jump_input_dim(), 4 + 2 + 5 + 2 + 39);
        assert_eq!(c.vectorfield_input_dim(), 5 + 2 + 2 + 2);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small_config(false, true, 0);
        c.signature_level = 4;
        assert!(ModelParams::init(&c, 0).is_err());
        let mut c = small_config(false, true, 0);
        c.latent_dim = 0;
        assert!(c.validate().is_err());
        let mut c = small_config(false, true, 0);
        c.ode_substeps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let p = ModelParams::init(&small_config(true, true, 2), 9).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        let mut q = ModelParams::zeros(&p.config).unwrap();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ckpt.json");
        let p = ModelParams::init(&small_config(true, false, 3), 4).unwrap();
        p.save(&file).unwrap();
        let q = ModelParams::load(&file).unwrap();
        let (a, b) = (p.to_flat(), q.to_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(p, q);
        let text = fs::read_to_string(&file).unwrap();
        assert!(text.contains(CHECKPOINT_SCHEMA));
    }

    #[test]
    fn zeroed_feedback_layout() {
        let base = ModelParams::init(&small_config(false, true, 1), 2).unwrap();
        let fb = ModelParams::with_zeroed_feedback(&base).unwrap();
        assert!(fb.config.use_output_feedback);
        let off = fb.config.jump_feedback_offset();
        let l = &fb.encoder.layers[0];
        for r in 0..l.n_out {
            for c in off..off + 2 {
                assert_eq!(l.weight_at(r, c), 0.0);
            }
            assert_eq!(l.weight_at(r, off + 2), base.encoder.layers[0].weight_at(r, off));
        }
        assert!(ModelParams::with_zeroed_feedback(&fb).is_err());
    }
}
