//! sEMG motion classification: spectral-moment (MPP/MZP) preprocessing feeding a
//! fixed 1D CNN trained from scratch, plus Hudgins TD-feature baselines.

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod features;
pub mod nn;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};
