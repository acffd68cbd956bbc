//! Minimal reverse-mode differentiation engine for the networks in this crate.

mod gradcheck;
mod layers;
mod matrix;
mod optim;
mod params;
pub mod special;
mod tape;

pub use gradcheck::grad_check;
pub use layers::{Activation, Dense, Mlp};
pub use matrix::Matrix;
pub use optim::Adam;
pub use params::{load_checkpoint, save_checkpoint, Bound, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{Gradients, NodeId, Tangents, Tape};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} called outside its domain (value {value})")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
