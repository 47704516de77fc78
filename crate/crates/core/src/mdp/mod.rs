//! Environment abstraction, trajectories, returns and exact solvers for finite MDPs.

mod finite;

pub use finite::{
    discounted_occupancies, discounted_occupancy, solve_q_exact, solve_v_exact, FiniteEnv, FiniteMdp, TabularPolicy,
};
pub(crate) use finite::{q_from_v, sample_index};

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded generator used everywhere a reproducible stream is needed.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label (e.g. an iteration index).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl State {
    pub fn index(&self) -> Option<usize> {
        match self {
            State::Discrete(i) => Some(*i),
            State::Continuous(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            State::Discrete(_) => None,
            State::Continuous(v) => Some(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn scalar(value: f64) -> Self {
        Action::Continuous(vec![value])
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }

    /// First real component; discrete actions report their index.
    pub fn first(&self) -> f64 {
        match self {
            Action::Discrete(i) => *i as f64,
            Action::Continuous(v) => v.first().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObservationSpace {
    Discrete { n: usize },
    Continuous { dim: usize },
}

impl ObservationSpace {
    pub fn contains(&self, s: &State) -> bool {
        match (self, s) {
            (ObservationSpace::Discrete { n }, State::Discrete(i)) => i < n,
            (ObservationSpace::Continuous { dim }, State::Continuous(v)) => v.len() == *dim,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete { n: usize },
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn scalar(low: f64, high: f64) -> Self {
        ActionSpace::Box {
            low: vec![low],
            high: vec![high],
        }
    }

    /// Number of components of an action (1 for discrete actions).
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { .. } => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    /// Length of the `[-1, 1]`-scaled (box) or one-hot (discrete) encoding.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn clamp(&self, a: &Action) -> Action {
        match (self, a) {
            (ActionSpace::Box { low, high }, Action::Continuous(v)) => Action::Continuous(
                v.iter()
                    .zip(low.iter().zip(high))
                    .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
                    .collect(),
            ),
            (ActionSpace::Discrete { n }, Action::Discrete(i)) => Action::Discrete((*i).min(n - 1)),
            _ => a.clone(),
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        match (self, a) {
            (ActionSpace::Discrete { n }, Action::Discrete(i)) => i < n,
            (ActionSpace::Box { low, high }, Action::Continuous(v)) => {
                v.len() == low.len()
                    && v
                        .iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
            }
            _ => false,
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Box { low, high } => Action::Continuous(
                low.iter()
                    .zip(high)
                    .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect(),
            ),
        }
    }

    /// Appends the encoding of `a`: box components are mapped affinely onto `[-1, 1]`,
    /// discrete actions are one-hot.
    pub fn encode(&self, a: &Action, out: &mut Vec<f64>) -> Result<()> {
        match (self, a) {
            (ActionSpace::Discrete { n }, Action::Discrete(i)) if i < n => {
                out.extend((0..*n).map(|k| if k == *i { 1.0 } else { 0.0 }));
                Ok(())
            }
            (ActionSpace::Box { low, high }, Action::Continuous(v)) if v.len() == low.len() => {
                out.extend(
                    v.iter()
                        .zip(low.iter().zip(high))
                        .map(|(x, (lo, hi))| 2.0 * (x - lo) / (hi - lo) - 1.0),
                );
                Ok(())
            }
            _ => Err(Error::config(
                "action",
                format!("action {a:?} does not belong to {self:?}"),
            )),
        }
    }
}

/// Outcome of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: State,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    fn observation_space(&self) -> ObservationSpace;

    fn action_space(&self) -> ActionSpace;

    fn reset(&mut self, rng: &mut SimRng) -> State;

    fn step(&mut self, action: &Action, rng: &mut SimRng) -> Result<Step>;

    /// Current (true) state, `None` before the first reset.
    fn state(&self) -> Option<State>;

    fn set_state(&mut self, state: &State) -> Result<()>;

    /// Feature encoding used by learned policies.
    fn encode_state(&self, state: &State, out: &mut Vec<f64>);

    fn encoded_state_dim(&self) -> usize;

    /// Whether [`Environment::substep`] is implemented.
    fn supports_substeps(&self) -> bool {
        false
    }

    /// Advances the dynamics for `fraction` of a unit step under `action`. The reward is the
    /// full-step reward rate evaluated at the pre-substep state.
    fn substep(&mut self, _action: &Action, _fraction: f64, _rng: &mut SimRng) -> Result<Step> {
        Err(Error::Capability(
            "environment cannot advance a fraction of a step".into(),
        ))
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn observation_space(&self) -> ObservationSpace {
        (**self).observation_space()
    }
    fn action_space(&self) -> ActionSpace {
        (**self).action_space()
    }
    fn reset(&mut self, rng: &mut SimRng) -> State {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &Action, rng: &mut SimRng) -> Result<Step> {
        (**self).step(action, rng)
    }
    fn state(&self) -> Option<State> {
        (**self).state()
    }
    fn set_state(&mut self, state: &State) -> Result<()> {
        (**self).set_state(state)
    }
    fn encode_state(&self, state: &State, out: &mut Vec<f64>) {
        (**self).encode_state(state, out)
    }
    fn encoded_state_dim(&self) -> usize {
        (**self).encoded_state_dim()
    }
    fn supports_substeps(&self) -> bool {
        (**self).supports_substeps()
    }
    fn substep(&mut self, action: &Action, fraction: f64, rng: &mut SimRng) -> Result<Step> {
        (**self).substep(action, fraction, rng)
    }
}

/// A (possibly stochastic) mapping from undelayed states to actions.
pub trait Policy {
    fn act(&self, state: &State, rng: &mut SimRng) -> Action;

    /// Input space the policy was built for; `None` accepts any.
    fn observation_space(&self) -> Option<ObservationSpace> {
        None
    }
}

impl<F> Policy for F
where
    F: Fn(&State) -> Action,
{
    fn act(&self, state: &State, _rng: &mut SimRng) -> Action {
        self(state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Environment time of the transition, starting at 0.
    pub t: usize,
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Transition>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.reward)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards().sum()
    }

    /// Writes `t,s,a,r` rows. Vector states and actions are joined with `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s", "a", "r"])?;
        for rec in &self.records {
            w.write_record([
                rec.t.to_string(),
                state_field(&rec.state),
                action_field(&rec.action),
                rec.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn state_field(s: &State) -> String {
    match s {
        State::Discrete(i) => i.to_string(),
        State::Continuous(v) => join(v),
    }
}

fn action_field(a: &Action) -> String {
    match a {
        Action::Discrete(i) => i.to_string(),
        Action::Continuous(v) => join(v),
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs `policy` from a fresh reset for at most `horizon` steps.
pub fn rollout<E, P>(env: &mut E, policy: &P, horizon: usize, seed: u64) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let mut rng = rng_from_seed(seed);
    let start = env.reset(&mut rng);
    rollout_from(env, policy, start, horizon, &mut rng)
}

fn rollout_from<E, P>(
    env: &mut E,
    policy: &P,
    start: State,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    if horizon == 0 {
        return Err(Error::Usage("rollout horizon must be at least 1".into()));
    }
    if let Some(space) = policy.observation_space() {
        let env_space = env.observation_space();
        if space != env_space {
            return Err(Error::config(
                "policy",
                format!("policy expects {space:?} but environment observes {env_space:?}"),
            ));
        }
    }
    let mut traj = Trajectory::default();
    let mut state = start;
    for t in 0..horizon {
        let action = policy.act(&state, rng);
        let step = env.step(&action, rng)?;
        if !step.reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward at t={t}")));
        }
        traj.records.push(Transition {
            t,
            state,
            action,
            reward: step.reward,
            next_state: step.state.clone(),
        });
        state = step.state;
        if step.terminal {
            traj.terminal = true;
            break;
        }
    }
    Ok(traj)
}

/// `sum_t gamma^t r_t`, with `t` the environment time stored in each record.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    traj.records
        .iter()
        .map(|rec| gamma.powi(rec.t as i32) * rec.reward)
        .sum()
}

/// Discounted sum of a plain reward sequence indexed from 0.
pub fn discounted_sum(rewards: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += weight * r;
        weight *= gamma;
    }
    total
}

/// Smallest horizon whose discounted tail `gamma^H * r_max / (1 - gamma)` is below `tol`.
pub fn truncation_horizon(gamma: f64, r_max: f64, tol: f64) -> usize {
    if gamma <= 0.0 || r_max <= 0.0 {
        return 1;
    }
    let needed = (tol * (1.0 - gamma) / r_max).ln() / gamma.ln();
    needed.ceil().max(1.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Estimate { mean, stderr: 0.0 };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Monte Carlo estimate of the discounted value of `policy` from `start` (or from the
/// environment's initial distribution when `start` is `None`).
pub fn mc_value_estimate<E, P>(
    env: &mut E,
    policy: &P,
    start: Option<&State>,
    n_episodes: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<Estimate>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    if n_episodes < 2 {
        return Err(Error::Usage("mc_value_estimate needs at least 2 episodes".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let s0 = env.reset(&mut rng);
        let s0 = match start {
            Some(s) => {
                env.set_state(s)?;
                s.clone()
            }
            None => s0,
        };
        let traj = rollout_from(env, policy, s0, horizon, &mut rng)?;
        returns.push(discounted_return(&traj, gamma));
    }
    Ok(Estimate::from_samples(&returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_return_examples() {
        let mk = |rewards: &[f64]| Trajectory {
            records: rewards
                .iter()
                .enumerate()
                .map(|(t, r)| Transition {
                    t,
                    state: State::Discrete(0),
                    action: Action::Discrete(0),
                    reward: *r,
                    next_state: State::Discrete(0),
                })
                .collect(),
            terminal: false,
        };
        assert_eq!(discounted_return(&mk(&[1.0, 1.0, 1.0]), 0.0), 1.0);
        assert_eq!(discounted_return(&mk(&[0.0; 10]), 0.9), 0.0);
        let ones = mk(&[1.0; 200]);
        let expected = (1.0 - 0.9f64.powi(200)) / 0.1;
        assert!((discounted_return(&ones, 0.9) - expected).abs() < 1e-12);
        assert!((expected - 10.0).abs() < 1e-8);
    }

    #[test]
    fn truncation_horizon_bounds_tail() {
        let h = truncation_horizon(0.9, 1.0, 1e-6);
        assert!(0.9f64.powi(h as i32) / 0.1 < 1e-6);
        assert!(0.9f64.powi(h as i32 - 1) / 0.1 >= 1e-6);
    }

    #[test]
    fn action_encoding_layout() {
        let space = ActionSpace::scalar(-2.0, 2.0);
        let mut out = Vec::new();
        space.encode(&Action::scalar(2.0), &mut out).unwrap();
        space.encode(&Action::scalar(-1.0), &mut out).unwrap();
        assert_eq!(out, vec![1.0, -0.5]);
        let disc = ActionSpace::Discrete { n: 3 };
        let mut out = Vec::new();
        disc.encode(&Action::Discrete(1), &mut out).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        assert!(disc.encode(&Action::Discrete(3), &mut out).is_err());
    }

    #[test]
    fn estimate_of_constant_samples_has_zero_stderr() {
        let e = Estimate::from_samples(&[2.0, 2.0, 2.0]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
    }
}
