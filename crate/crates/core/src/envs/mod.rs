//! Desk-scale environments: pendulum swing-up (optionally with action noise), the
//! linear-Gaussian walk, and finite Lipschitz chains.

pub mod chain;
pub mod gaussian_walk;
pub mod noise;
pub mod pendulum;

pub use chain::{make_chain_mdp, measure_constants, ChainCosts, MdpConstants, CHAIN_MOVES};
pub use gaussian_walk::{gaussian_walk_step, GaussianWalk, GaussianWalkParams};
pub use noise::{NoiseKind, NoiseSpec, NOISE_NAMES};
pub use pendulum::{pendulum_step, Pendulum, PendulumState};
