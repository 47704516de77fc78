//! Undelayed expert policies: an energy-shaping pendulum controller, value-iteration experts
//! for finite MDPs, and the closed-form optimal policy of the Gaussian walk.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::pendulum::{pendulum_energy, wrap_angle, PendulumState, MAX_SPEED, MAX_TORQUE};
use crate::error::{Error, Result};
use crate::mdp::{rng_from_seed, Action, FiniteMdp, Policy, SimRng, State, TabularPolicy};

/// A deterministic undelayed policy that DIDA can query on true states.
pub trait Expert {
    fn action(&self, state: &State) -> Action;

    /// Declared Lipschitz constant, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

impl<E: Expert + ?Sized> Expert for &E {
    fn action(&self, state: &State) -> Action {
        (**self).action(state)
    }
    fn lipschitz(&self) -> Option<f64> {
        (**self).lipschitz()
    }
}

impl<E: Expert + ?Sized> Expert for Box<E> {
    fn action(&self, state: &State) -> Action {
        (**self).action(state)
    }
    fn lipschitz(&self) -> Option<f64> {
        (**self).lipschitz()
    }
}

/// Gains of the swing-up controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumGains {
    /// Energy-pumping gain.
    pub k_energy: f64,
    pub k_p: f64,
    pub k_d: f64,
    /// `cos(theta)` below which only energy pumping acts.
    pub blend_low: f64,
    /// `cos(theta)` above which only the PD law acts.
    pub blend_high: f64,
}

impl Default for PendulumGains {
    fn default() -> Self {
        PendulumGains {
            k_energy: 0.5,
            k_p: 20.0,
            k_d: 5.0,
            blend_low: 0.75,
            blend_high: 0.95,
        }
    }
}

/// Energy shaping far from upright, PD stabilization near upright, blended by a smoothstep in
/// `cos(theta)` so the torque is continuous in the state.
#[derive(Clone, Debug)]
pub struct PendulumEnergyExpert {
    gains: PendulumGains,
    lipschitz: f64,
}

impl PendulumEnergyExpert {
    pub fn new(gains: PendulumGains) -> Result<Self> {
        if !(gains.blend_low < gains.blend_high) {
            return Err(Error::config("expert.blend", "blend_low must be below blend_high"));
        }
        let mut expert = PendulumEnergyExpert {
            gains,
            lipschitz: f64::INFINITY,
        };
        // Stored constant: the finite-difference audit with a 25% margin for unsampled pairs.
        expert.lipschitz = 1.25 * lipschitz_audit(|s| expert.torque(s), 10_000, 1e-3, 0x5eed);
        Ok(expert)
    }

    pub fn gains(&self) -> &PendulumGains {
        &self.gains
    }

    pub fn torque(&self, s: PendulumState) -> f64 {
        let g = &self.gains;
        let energy = pendulum_energy(s);
        let pump = g.k_energy * s.theta_dot * (-energy);
        let theta = wrap_angle(s.theta);
        let pd = -(g.k_p * theta + g.k_d * s.theta_dot);
        let w = ((s.theta.cos() - g.blend_low) / (g.blend_high - g.blend_low)).clamp(0.0, 1.0);
        let w = w * w * (3.0 - 2.0 * w);
        (w * pd + (1.0 - w) * pump).clamp(-MAX_TORQUE, MAX_TORQUE)
    }
}

impl Default for PendulumEnergyExpert {
    fn default() -> Self {
        Self::new(PendulumGains::default()).expect("default gains are valid")
    }
}

impl Expert for PendulumEnergyExpert {
    fn action(&self, state: &State) -> Action {
        let s = PendulumState::from_state(state).expect("pendulum expert needs a pendulum state");
        Action::scalar(self.torque(s))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// Largest finite-difference slope `|f(s) - f(s')| / d(s, s')` over `n_pairs` random states
/// and perturbations of Euclidean size `eps` (angles compared on the circle).
pub fn lipschitz_audit<F: Fn(PendulumState) -> f64>(f: F, n_pairs: usize, eps: f64, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let s = PendulumState::new(rng.random_range(-PI..PI), rng.random_range(-MAX_SPEED..MAX_SPEED));
        let dir: f64 = rng.random_range(0.0..2.0 * PI);
        let s2 = PendulumState::new(s.theta + eps * dir.cos(), s.theta_dot + eps * dir.sin());
        let d = (wrap_angle(s2.theta - s.theta).powi(2) + (s2.theta_dot - s.theta_dot).powi(2)).sqrt();
        if d > 0.0 {
            worst = worst.max((f(s) - f(s2)).abs() / d);
        }
    }
    worst
}

/// Greedy tabular policy of a value-iteration fixed point; ties go to the lowest action index.
#[derive(Clone, Debug)]
pub struct TabularExpert {
    pub policy: TabularPolicy,
    pub values: Vec<f64>,
    action_embedding: Vec<f64>,
}

impl TabularExpert {
    pub fn from_policy(mdp: &FiniteMdp, policy: TabularPolicy) -> Self {
        TabularExpert {
            values: Vec::new(),
            action_embedding: mdp.action_embedding().to_vec(),
            policy,
        }
    }
}

impl Expert for TabularExpert {
    fn action(&self, state: &State) -> Action {
        let s = state.index().expect("tabular expert needs a discrete state");
        let a = self
            .policy
            .deterministic_action(s)
            .expect("tabular experts are deterministic");
        Action::Discrete(a)
    }
}

impl TabularExpert {
    /// Embedded action value of the expert's action at `s`.
    pub fn embedded_action(&self, s: usize) -> f64 {
        (0..self.policy.n_actions())
            .map(|a| self.policy.prob(s, a) * self.action_embedding[a])
            .sum()
    }
}

const VALUE_ITERATION_CAP: usize = 1_000_000;

pub fn value_iteration_expert(mdp: &FiniteMdp, tol: f64) -> Result<TabularExpert> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", "tolerance must be positive"));
    }
    let (n, m, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut v = vec![0.0; n];
    let mut converged = false;
    for _ in 0..VALUE_ITERATION_CAP {
        let q = crate::mdp::q_from_v(mdp, &v);
        let next: Vec<f64> = q
            .chunks(m)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let gap = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if gap <= tol * (1.0 - gamma).max(1e-12) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("value iteration did not converge".into()));
    }
    let q = crate::mdp::q_from_v(mdp, &v);
    let actions: Vec<usize> = q.chunks(m).map(greedy_lowest_index).collect();
    Ok(TabularExpert {
        policy: TabularPolicy::deterministic(m, &actions),
        values: v,
        action_embedding: mdp.action_embedding().to_vec(),
    })
}

/// Index of the largest entry; entries within a relative `1e-12` of the maximum count as ties.
pub fn greedy_lowest_index(row: &[f64]) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + best.abs());
    row.iter().position(|q| *q >= best - slack).unwrap_or(0)
}

/// Optimal policy of the Gaussian walk: `a = -L_pi s`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianOptimalExpert {
    pub l_pi: f64,
}

pub fn gaussian_optimal_expert(s: f64, l_pi: f64) -> f64 {
    -l_pi * s
}

impl Expert for GaussianOptimalExpert {
    fn action(&self, state: &State) -> Action {
        Action::scalar(gaussian_optimal_expert(state.values().expect("walk state")[0], self.l_pi))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.l_pi)
    }
}

/// Adapter so experts can drive [`crate::mdp::rollout`].
pub struct AsPolicy<E>(pub E);

impl<E: Expert> Policy for AsPolicy<E> {
    fn act(&self, state: &State, _rng: &mut SimRng) -> Action {
        self.0.action(state)
    }
}
