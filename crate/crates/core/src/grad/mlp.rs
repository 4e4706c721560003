//! Small feed-forward networks: tanh on hidden layers, identity on the output.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// One affine layer, weight stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Weights uniform in `(-1/sqrt(n_in), 1/sqrt(n_in))`, zero biases.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = 1.0 / (n_in as f64).sqrt();
        let dist = Uniform::new(-a, a).expect("finite bound");
        let weight = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    pub fn weight_at(&self, row: usize, col: usize) -> f64 {
        self.weight[row * self.n_in + col]
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.n_in * self.n_out || self.bias.len() != self.n_out {
            return Err(Error::Config(format!(
                "layer {}x{} holds {} weights and {} biases",
                self.n_out,
                self.n_in,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// `sizes` lists every width from input to output, e.g. `[in, hidden, out]`.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Layer::init(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { layers })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {:?}", sizes)));
        }
        Ok(())
    }

    /// Checks that consecutive layers chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network without layers".into()));
        }
        for l in &self.layers {
            l.check()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Config(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].n_out, pair[1].n_in
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Appends weights then biases of every layer.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`MlpParams::write_flat`]; returns the number of values consumed.
    pub fn read_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::Config(format!(
                "flat buffer of {} values is shorter than {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(pos)
    }

    /// Registers every weight and bias on the tape as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, true)
    }

    /// Registers parameters as constants; nothing is tracked.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let shape = vec![l.n_out, l.n_in];
                let w = if trainable {
                    tape.variable_shaped(l.weight.clone(), shape)
                        .expect("layer shape checked at construction")
                } else {
                    tape.constant_shaped(l.weight.clone(), shape)
                        .expect("layer shape checked at construction")
                };
                let b = if trainable {
                    tape.variable(l.bias.clone())
                } else {
                    tape.constant(l.bias.clone())
                };
                (w, b)
            })
            .collect();
        BoundMlp { layers }
    }
}

/// Tape handles for the parameters of an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    /// Parameter handles in the same order as [`MlpParams::write_flat`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }

    pub fn input_dim(&self, tape: &Tape) -> usize {
        tape.shape(self.layers[0].0)[1]
    }
}

/// Runs the network on the tape: tanh after every layer except the last.
pub fn mlp_forward(tape: &mut Tape, net: &BoundMlp, input: Var) -> Result<Var> {
    let expected = net.input_dim(tape);
    let got = tape.value(input).len();
    if got != expected {
        return Err(Error::Config(format!(
            "network expects {expected} inputs, got {got}"
        )));
    }
    let mut h = input;
    let last = net.layers.len() - 1;
    for (i, (w, b)) in net.layers.iter().enumerate() {
        h = tape.affine(*w, *b, h)?;
        if i < last {
            h = tape.tanh(h);
        }
    }
    Ok(h)
}
