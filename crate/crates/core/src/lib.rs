//! Mixed-type tabular data synthesis.
//!
//! Tables with numeric and categorical columns are mapped into one continuous
//! space (quantile-normalised numerics concatenated with a categorical codec,
//! by default the roots-of-unity encoding), a fully connected denoiser is
//! trained there with either a DDPM or a flow-matching objective, and sampled
//! rows are decoded back to the original schema. The `eval` module scores
//! synthetic output for fidelity, detectability, privacy and downstream
//! utility; `geometry` checks the score-variance structure of one-hot
//! representations numerically.

pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod generative;
pub mod geometry;
pub mod par;
pub mod report;
pub mod rng;
pub mod toy;
pub mod transforms;

pub use error::{Error, Result};
pub use par::Exec;
