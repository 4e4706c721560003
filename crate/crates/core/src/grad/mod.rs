//! Reverse-mode differentiation, tanh networks and the Adam optimizer.

mod adam;
mod check;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use check::finite_diff_check;
pub use mlp::{mlp_forward, BoundMlp, Layer, MlpParams};
pub use tape::{Gradients, Tape, Var};
