//! ParamReL: parameter-space representation learning on Bayesian flow
//! networks, for continuous and discrete data at desk scale.
//!
//! The crate trains a self-encoder and conditional decoder over the
//! parameters of a BFN input distribution, samples and reverse-samples
//! trajectories, interpolates and traverses latents, and scores the
//! learned representations with linear probes.

pub mod bfn;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
