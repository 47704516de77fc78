//! Constant integer and fractional delays on top of any [`Environment`].
//!
//! Convention: a delay `n + f` (integer part `n`, fractional part `f` in `[0, 1)`) means the
//! observation lags `n` true steps and each chosen action starts acting `f` of a step after it
//! was chosen. The augmented state is the last observed state together with the
//! `n + ceil(f)` actions executed (fully or partly) since that state, oldest first.

mod fractional;

pub use fractional::{check_fractional_composition, CompositionReport, SubstepKernels};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    rng_from_seed, Action, ActionSpace, Environment, FiniteMdp, ObservationSpace, SimRng, State,
};

/// Observation of a delayed process: `x = (s, a_1, ..., a_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub base_state: State,
    /// Pending actions, oldest (first to execute) first.
    pub action_queue: Vec<Action>,
}

/// A constant delay, split into whole steps and a fractional remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delay {
    pub steps: usize,
    pub fraction: f64,
}

impl Delay {
    pub fn integer(steps: usize) -> Self {
        Delay {
            steps,
            fraction: 0.0,
        }
    }

    /// Splits a nonnegative real delay into integer and fractional parts.
    pub fn from_real(delay: f64) -> Result<Self> {
        if !delay.is_finite() || delay < 0.0 {
            return Err(Error::config("delay", format!("{delay} is not a nonnegative delay")));
        }
        let steps = delay.floor();
        Ok(Delay {
            steps: steps as usize,
            fraction: delay - steps,
        })
    }

    pub fn value(&self) -> f64 {
        self.steps as f64 + self.fraction
    }

    pub fn is_fractional(&self) -> bool {
        self.fraction > 0.0
    }

    /// Length of the action queue carried by augmented states.
    pub fn queue_len(&self) -> usize {
        self.steps + usize::from(self.is_fractional())
    }
}

/// Result of one delayed step.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayedStep {
    pub observation: AugmentedState,
    /// Reward realized by the true transition at the current environment time.
    pub reward: f64,
    /// Reward of the transition leaving the newly superseded observed state, i.e. the reward
    /// the agent gets to see this step (it lags `reward` by the integer delay).
    pub observed_reward: f64,
    pub terminal: bool,
}

/// Policy acting on augmented states.
pub trait DelayedPolicy {
    fn act(&self, x: &AugmentedState, rng: &mut SimRng) -> Action;
}

impl<F> DelayedPolicy for F
where
    F: Fn(&AugmentedState) -> Action,
{
    fn act(&self, x: &AugmentedState, _rng: &mut SimRng) -> Action {
        self(x)
    }
}

/// Runs an undelayed policy on the observed base state only (memoryless policy).
pub struct Memoryless<P>(pub P);

impl<P: crate::mdp::Policy> DelayedPolicy for Memoryless<P> {
    fn act(&self, x: &AugmentedState, rng: &mut SimRng) -> Action {
        self.0.act(&x.base_state, rng)
    }
}

/// Delayed view of an environment. The true current state stays hidden from
/// [`DelayedEnv::step`]'s observation; [`DelayedEnv::true_state`] is a privileged accessor
/// reserved for experts during imitation.
pub struct DelayedEnv<E> {
    inner: E,
    delay: Delay,
    rng: SimRng,
    /// Grid states `s_{t-n}, ..., s_t`.
    history: VecDeque<State>,
    /// Actions `a_{t-n-ceil(f)}, ..., a_{t-1}`.
    queue: VecDeque<Action>,
    /// Realized rewards not yet revealed to the agent.
    hidden_rewards: VecDeque<f64>,
    warmup_rewards: Vec<f64>,
    t: usize,
    started: bool,
}

/// Wraps `env` with an integer delay of `steps`.
pub fn wrap_delayed<E: Environment>(env: E, steps: usize, seed: u64) -> DelayedEnv<E> {
    DelayedEnv::new_unchecked(env, Delay::integer(steps), seed)
}

/// Wraps `env` with a fractional delay `delta` in `(0, 1)`; the environment must support
/// substeps.
pub fn wrap_fractional<E: Environment>(env: E, delta: f64, seed: u64) -> Result<DelayedEnv<E>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("delay", format!("fractional delay {delta} not in (0, 1)")));
    }
    DelayedEnv::new(env, Delay { steps: 0, fraction: delta }, seed)
}

impl<E: Environment> DelayedEnv<E> {
    pub fn new(env: E, delay: Delay, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&delay.fraction) {
            return Err(Error::config("delay", "fractional part must lie in [0, 1)"));
        }
        if delay.is_fractional() && !env.supports_substeps() {
            return Err(Error::Capability(
                "fractional delay needs an environment that can advance part of a step".into(),
            ));
        }
        Ok(Self::new_unchecked(env, delay, seed))
    }

    fn new_unchecked(inner: E, delay: Delay, seed: u64) -> Self {
        DelayedEnv {
            inner,
            delay,
            rng: rng_from_seed(seed),
            history: VecDeque::new(),
            queue: VecDeque::new(),
            hidden_rewards: VecDeque::new(),
            warmup_rewards: Vec::new(),
            t: 0,
            started: false,
        }
    }

    pub fn delay(&self) -> Delay {
        self.delay
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.inner
    }

    pub fn action_space(&self) -> ActionSpace {
        self.inner.action_space()
    }

    pub fn observation_space(&self) -> ObservationSpace {
        self.inner.observation_space()
    }

    /// Steps taken since the last reset.
    pub fn time(&self) -> usize {
        self.t
    }

    /// Rewards realized while the initial random queue was played out during reset.
    pub fn warmup_rewards(&self) -> &[f64] {
        &self.warmup_rewards
    }

    /// Reseeds the wrapper's generator.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = rng_from_seed(seed);
    }

    /// Draws `s_0` from the inner initial distribution and a uniform queue, then plays the
    /// queue out so the hidden state is `n` steps ahead of the observation.
    pub fn reset(&mut self) -> AugmentedState {
        let s0 = self.inner.reset(&mut self.rng);
        self.history.clear();
        self.queue.clear();
        self.hidden_rewards.clear();
        self.warmup_rewards.clear();
        self.history.push_back(s0);
        let space = self.inner.action_space();
        let pending: Vec<Action> = (0..self.delay.queue_len())
            .map(|_| space.sample_uniform(&mut self.rng))
            .collect();
        let mut pending = pending.into_iter();
        if self.delay.is_fractional() {
            // a_{-1}: the action still acting at the start of the first step.
            self.queue.extend(pending.next());
        }
        self.started = true;
        for a in pending {
            // Playing the warm-up through the regular step keeps the bookkeeping in one place;
            // these transitions only ever involve random actions.
            let step = self.advance(&a).expect("warm-up step on a freshly reset environment");
            self.warmup_rewards.push(step.0);
        }
        self.t = 0;
        self.observation()
    }

    /// Applies `action` to the hidden state and shifts the observation window.
    pub fn step(&mut self, action: &Action) -> Result<DelayedStep> {
        if !self.started {
            return Err(Error::State("step called before reset".into()));
        }
        let (reward, terminal) = self.advance(action)?;
        let observed_reward = if self.hidden_rewards.len() > self.delay.steps {
            self.hidden_rewards.pop_front().unwrap_or(reward)
        } else {
            reward
        };
        self.t += 1;
        Ok(DelayedStep {
            observation: self.observation(),
            reward,
            observed_reward,
            terminal,
        })
    }

    fn advance(&mut self, action: &Action) -> Result<(f64, bool)> {
        let space = self.inner.action_space();
        if !matches!(
            (&space, action),
            (ActionSpace::Discrete { .. }, Action::Discrete(_))
                | (ActionSpace::Box { .. }, Action::Continuous(_))
        ) {
            return Err(Error::config("action", format!("{action:?} does not match {space:?}")));
        }
        let action = space.clamp(action);
        let (reward, terminal) = if self.delay.is_fractional() {
            let f = self.delay.fraction;
            let previous = self
                .queue
                .back()
                .cloned()
                .ok_or_else(|| Error::State("fractional queue is empty".into()))?;
            let first = self.inner.substep(&previous, f, &mut self.rng)?;
            let second = self.inner.substep(&action, 1.0 - f, &mut self.rng)?;
            (
                f * first.reward + (1.0 - f) * second.reward,
                first.terminal || second.terminal,
            )
        } else {
            let step = self.inner.step(&action, &mut self.rng)?;
            (step.reward, step.terminal)
        };
        let next = self
            .inner
            .state()
            .ok_or_else(|| Error::State("inner environment lost its state".into()))?;
        self.history.push_back(next);
        if self.history.len() > self.delay.steps + 1 {
            self.history.pop_front();
        }
        self.queue.push_back(action);
        if self.queue.len() > self.delay.queue_len() {
            self.queue.pop_front();
        }
        self.hidden_rewards.push_back(reward);
        Ok((reward, terminal))
    }

    pub fn observation(&self) -> AugmentedState {
        AugmentedState {
            base_state: self
                .history
                .front()
                .cloned()
                .expect("observation requested before reset"),
            action_queue: self.queue.iter().cloned().collect(),
        }
    }

    /// The hidden current state. Only experts and diagnostics should read this.
    pub fn true_state(&self) -> Option<State> {
        if !self.started {
            return None;
        }
        self.inner.state()
    }

    /// Flat encoding: the inner state encoding followed by each queued action's encoding.
    pub fn encode(&self, x: &AugmentedState, out: &mut Vec<f64>) -> Result<()> {
        if x.action_queue.len() != self.delay.queue_len() {
            return Err(Error::config(
                "delay",
                format!(
                    "augmented state carries {} actions, expected {}",
                    x.action_queue.len(),
                    self.delay.queue_len()
                ),
            ));
        }
        self.inner.encode_state(&x.base_state, out);
        let space = self.inner.action_space();
        for a in &x.action_queue {
            space.encode(a, out)?;
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        self.inner.encoded_state_dim()
            + self.delay.queue_len() * self.inner.action_space().encoded_dim()
    }
}

/// Runs a delayed policy for `horizon` steps and returns the realized rewards.
pub fn delayed_rollout<E, P>(
    denv: &mut DelayedEnv<E>,
    policy: &P,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Vec<f64>>
where
    E: Environment,
    P: DelayedPolicy + ?Sized,
{
    let mut x = denv.reset();
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = policy.act(&x, rng);
        let step = denv.step(&a)?;
        rewards.push(step.reward);
        x = step.observation;
        if step.terminal {
            break;
        }
    }
    Ok(rewards)
}

/// Distribution of the current state given an augmented state: the Dirac at the base state
/// pushed through each queued action's transition matrix.
pub fn belief_exact(mdp: &FiniteMdp, x: &AugmentedState) -> Result<Vec<f64>> {
    let s = x
        .base_state
        .index()
        .filter(|s| *s < mdp.n_states())
        .ok_or_else(|| Error::config("state", format!("{:?} is not a state of the MDP", x.base_state)))?;
    let actions = queue_indices(mdp, &x.action_queue)?;
    Ok(belief_from_indices(mdp, s, &actions))
}

pub(crate) fn queue_indices(mdp: &FiniteMdp, queue: &[Action]) -> Result<Vec<usize>> {
    queue
        .iter()
        .map(|a| {
            a.index()
                .filter(|a| *a < mdp.n_actions())
                .ok_or_else(|| Error::config("action_queue", format!("{a:?} is not an action of the MDP")))
        })
        .collect()
}

pub(crate) fn belief_from_indices(mdp: &FiniteMdp, s: usize, actions: &[usize]) -> Vec<f64> {
    let mut b = vec![0.0; mdp.n_states()];
    b[s] = 1.0;
    for &a in actions {
        b = mdp.push_forward(&b, a);
    }
    b
}
