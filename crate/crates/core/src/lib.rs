//! Estimation of linear cyclic causal models with latent confounders from
//! interventional data, with robust covariance back ends and a contamination
//! benchmark harness.
//!
//! The pipeline is: simulate per-experiment samples ([`simulate`]), estimate one
//! covariance per experiment ([`covest`]), read total effects off the
//! covariances and solve the path constraints for the direct effects ([`llc`]),
//! then score against the ground truth ([`bench`]).

pub mod bench;
pub mod covest;
pub mod demo;
pub mod error;
pub mod linalg;
pub mod llc;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
