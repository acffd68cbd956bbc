#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod agentnets;
pub mod autodiff;
pub mod dynamics;
pub mod envsim;
pub mod evalbench;
pub mod experiment;
pub mod gailtrain;
mod error;
pub mod io;
pub mod rewards;
pub mod trpo;
pub mod types;

pub use error::{Error, Result};
