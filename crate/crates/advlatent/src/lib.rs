//! Measuring and explaining the adversarial robustness of split neural
//! network inference: exact finite-chain information laws, a small tensor
//! and layer stack, splittable classifiers with latent codecs, attack
//! algorithms in input and latent space, neural MI estimators, and a wire
//! harness for attacking a live mobile/edge link.

pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod ib;
pub mod mi;
pub mod nn;
pub mod rng;
pub mod splitnet;

pub use error::{Error, Result};
