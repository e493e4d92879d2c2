//! Scientific machine learning for pharmacokinetics.
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation and Adam.
//! * [`pkode`]: compartment models and fixed-step Euler/RK4 integration.
//! * [`synthdata`]: seeded generators for the three synthetic datasets.
//! * [`transformer`]: causal Transformer concentration forecaster.
//! * [`diffusion`]: DDPM over physiological vectors with a constraint penalty.
//! * [`allometry`]: GNN-conditioned Neural ODE for cross-species extrapolation.
//! * [`io`]: CSV and JSON file formats for the datasets.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allometry;
pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod pkode;
pub mod rng;
pub mod synthdata;
pub mod transformer;

pub use error::{Error, Result};
