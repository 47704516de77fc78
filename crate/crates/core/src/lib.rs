//! Delayed reinforcement learning by imitation.
//!
//! The crate wraps Markov decision processes with constant integer or fractional delays,
//! learns delayed policies by imitating undelayed experts (DIDA), provides tabular
//! SARSA-family baselines, and checks performance bounds for delayed policies on exactly
//! solvable finite MDPs.

pub mod baselines;
pub mod curve;
pub mod delay;
pub mod dida;
pub mod envs;
pub mod error;
pub mod experts;
pub mod harness;
pub mod mdp;
pub mod theory;

pub use error::{Error, Result};
