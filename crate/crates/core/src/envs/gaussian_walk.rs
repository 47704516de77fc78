use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, ActionSpace, Environment, ObservationSpace, SimRng, State, Step};

/// States are kept inside `[-STATE_LIMIT, STATE_LIMIT]`.
pub const STATE_LIMIT: f64 = 50.0;

/// Linear-Gaussian walk `s' = s + a / L_pi + N(0, sigma^2)` with reward
/// `-L_Q L_pi |s + a / L_pi|`. Its optimal policy `a = -L_pi s` earns zero reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianWalkParams {
    pub l_pi: f64,
    pub l_q: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl Default for GaussianWalkParams {
    fn default() -> Self {
        GaussianWalkParams {
            l_pi: 1.0,
            l_q: 1.0,
            sigma: 0.1,
            gamma: 0.9,
        }
    }
}

impl GaussianWalkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_pi > 0.0 && self.l_q > 0.0) {
            return Err(Error::config("gaussian_walk", "L_pi and L_Q must be positive"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("gaussian_walk.sigma", "noise std must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gaussian_walk.gamma", "discount must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `L_r = L_Q L_pi`.
    pub fn l_r(&self) -> f64 {
        self.l_q * self.l_pi
    }

    /// Noise-free image `s + a / L_pi`.
    pub fn mean_next(&self, s: f64, a: f64) -> f64 {
        s + a / self.l_pi
    }
}

/// One transition of the walk.
pub fn gaussian_walk_step(s: f64, a: f64, params: &GaussianWalkParams, rng: &mut SimRng) -> (f64, f64) {
    let target = params.mean_next(s, a);
    let reward = -params.l_r() * target.abs();
    let noise: f64 = if params.sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        params.sigma * z
    } else {
        0.0
    };
    ((target + noise).clamp(-STATE_LIMIT, STATE_LIMIT), reward)
}

#[derive(Clone, Debug)]
pub struct GaussianWalk {
    params: GaussianWalkParams,
    state: Option<f64>,
}

impl GaussianWalk {
    pub fn new(params: GaussianWalkParams) -> Result<Self> {
        params.validate()?;
        Ok(GaussianWalk { params, state: None })
    }

    pub fn params(&self) -> &GaussianWalkParams {
        &self.params
    }
}

impl Environment for GaussianWalk {
    fn observation_space(&self) -> ObservationSpace {
        ObservationSpace::Continuous { dim: 1 }
    }

    fn action_space(&self) -> ActionSpace {
        let bound = 2.0 * STATE_LIMIT * self.params.l_pi;
        ActionSpace::scalar(-bound, bound)
    }

    /// Initial state `N(0, 1)`.
    fn reset(&mut self, rng: &mut SimRng) -> State {
        let s: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        let s = s.clamp(-STATE_LIMIT, STATE_LIMIT);
        self.state = Some(s);
        State::Continuous(vec![s])
    }

    fn step(&mut self, action: &Action, rng: &mut SimRng) -> Result<Step> {
        let s = self
            .state
            .ok_or_else(|| Error::State("gaussian walk stepped before reset".into()))?;
        let (next, reward) = gaussian_walk_step(s, action.first(), &self.params, rng);
        self.state = Some(next);
        Ok(Step {
            state: State::Continuous(vec![next]),
            reward,
            terminal: false,
        })
    }

    fn state(&self) -> Option<State> {
        self.state.map(|s| State::Continuous(vec![s]))
    }

    fn set_state(&mut self, state: &State) -> Result<()> {
        match state.values() {
            Some([s]) if s.is_finite() => {
                self.state = Some(s.clamp(-STATE_LIMIT, STATE_LIMIT));
                Ok(())
            }
            _ => Err(Error::config("state", format!("not a walk state: {state:?}"))),
        }
    }

    fn encode_state(&self, state: &State, out: &mut Vec<f64>) {
        out.push(state.values().expect("walk state")[0]);
    }

    fn encoded_state_dim(&self) -> usize {
        1
    }
}
