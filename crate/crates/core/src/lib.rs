//! Bayesian estimation of intervention distributions in Gaussian process
//! networks.

pub mod causal_local;
pub mod causal_mc;
pub mod curve;
pub mod data;
pub mod error;
pub mod gpn;
pub mod graph;
pub mod kernel;
pub mod linear;
mod memo;
pub mod mcmc;
pub mod rng;
pub mod stats;
pub mod structure;

pub use error::{Error, Result};
pub use data::Dataset;
pub use graph::{Dag, NodeSet};
pub use kernel::{GpPosterior, HyperPrior, Hyperparams};
