//! Finite-MDP laboratory for the multi-environment replay-buffer
//! actor-critic ("mixing sim and real") together with analytic oracles for
//! its fixed points, gradients, and perturbation bounds.

pub mod analysis;
pub mod env_model;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod par;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
