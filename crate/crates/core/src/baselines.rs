//! Tabular delayed baselines on discretized spaces: memoryless SARSA(lambda), dSARSA (which
//! credits the oldest queued action, the one actually applied at the observed state) and
//! SARSA(lambda) on the discretized augmented state.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{CurveRow, EvalStats};
use crate::delay::{AugmentedState, Delay, DelayedEnv};
use crate::dida::evaluate_delayed;
use crate::envs::pendulum::{MAX_SPEED, MAX_TORQUE};
use crate::error::{Error, Result};
use crate::experts::greedy_lowest_index;
use crate::mdp::{derive_seed, rng_from_seed, Action, Environment, SimRng, State};

/// Maps states to cell indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Discretizer {
    /// Already discrete states.
    Finite { n: usize },
    /// Uniform bins per dimension over `[low, high]`; values outside land in the edge bins.
    Grid { low: Vec<f64>, high: Vec<f64>, bins: Vec<usize> },
}

impl Discretizer {
    /// `bins` per dimension over `(theta, theta_dot)`.
    pub fn pendulum(bins: usize) -> Self {
        Discretizer::Grid {
            low: vec![-PI, -MAX_SPEED],
            high: vec![PI, MAX_SPEED],
            bins: vec![bins, bins],
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Discretizer::Finite { n } => *n,
            Discretizer::Grid { bins, .. } => bins.iter().product(),
        }
    }

    pub fn index(&self, s: &State) -> Result<usize> {
        match (self, s) {
            (Discretizer::Finite { n }, State::Discrete(i)) if i < n => Ok(*i),
            (Discretizer::Grid { low, high, bins }, State::Continuous(v)) if v.len() == bins.len() => {
                let mut idx = 0;
                for k in 0..v.len() {
                    let frac = (v[k] - low[k]) / (high[k] - low[k]);
                    let cell = ((frac * bins[k] as f64).floor().max(0.0) as usize).min(bins[k] - 1);
                    idx = idx * bins[k] + cell;
                }
                Ok(idx)
            }
            _ => Err(Error::config("discretizer", format!("cannot discretize {s:?} with {self:?}"))),
        }
    }
}

/// Finite set of actions the tabular learners choose from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionGrid {
    Discrete { n: usize },
    Scalar { values: Vec<f64> },
}

impl ActionGrid {
    /// Three torques: full left, none, full right.
    pub fn pendulum() -> Self {
        ActionGrid::Scalar {
            values: vec![-MAX_TORQUE, 0.0, MAX_TORQUE],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ActionGrid::Discrete { n } => *n,
            ActionGrid::Scalar { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action(&self, i: usize) -> Action {
        match self {
            ActionGrid::Discrete { .. } => Action::Discrete(i),
            ActionGrid::Scalar { values } => Action::scalar(values[i]),
        }
    }

    /// Grid index of an action (nearest grid value for real actions).
    pub fn index(&self, a: &Action) -> Result<usize> {
        match (self, a) {
            (ActionGrid::Discrete { n }, Action::Discrete(i)) if i < n => Ok(*i),
            (ActionGrid::Scalar { values }, Action::Continuous(v)) if v.len() == 1 && !values.is_empty() => Ok(values
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| (*x - v[0]).abs().total_cmp(&(*y - v[0]).abs()))
                .map(|(i, _)| i)
                .expect("non-empty grid")),
            _ => Err(Error::config("actions", format!("{a:?} is not on the action grid {self:?}"))),
        }
    }
}

/// Q table with sparse replacing eligibility traces.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    n_obs: usize,
    n_actions: usize,
    q: Vec<f64>,
    /// `(cell, trace)` for every pair with a trace above the cutoff.
    traces: Vec<(usize, f64)>,
}

/// Traces below this are dropped.
pub const TRACE_CUTOFF: f64 = 1e-6;

impl TabularQ {
    pub fn new(n_obs: usize, n_actions: usize) -> Self {
        TabularQ {
            n_obs,
            n_actions,
            q: vec![0.0; n_obs * n_actions],
            traces: Vec::new(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, o: usize, a: usize) -> f64 {
        self.q[o * self.n_actions + a]
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.q[o * self.n_actions..(o + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn trace(&self, o: usize, a: usize) -> f64 {
        let cell = o * self.n_actions + a;
        self.traces.iter().find(|(c, _)| *c == cell).map_or(0.0, |(_, e)| *e)
    }

    pub fn reset_traces(&mut self) {
        self.traces.clear();
    }

    pub fn greedy(&self, o: usize) -> usize {
        greedy_lowest_index(self.row(o))
    }

    pub fn epsilon_greedy(&self, o: usize, epsilon: f64, rng: &mut SimRng) -> usize {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..self.n_actions)
        } else {
            self.greedy(o)
        }
    }

    fn check(&self, o: usize, a: usize) -> Result<()> {
        if o >= self.n_obs || a >= self.n_actions {
            return Err(Error::config(
                "table",
                format!("pair ({o}, {a}) outside a {}x{} table", self.n_obs, self.n_actions),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SarsaParams {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for SarsaParams {
    fn default() -> Self {
        SarsaParams {
            alpha: 0.1,
            gamma: 0.99,
            lambda: 0.9,
            epsilon: 0.2,
        }
    }
}

/// One on-policy transition between credited pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SarsaTransition {
    pub obs: usize,
    pub action: usize,
    pub reward: f64,
    pub next_obs: usize,
    pub next_action: usize,
}

/// SARSA(lambda) with replacing traces; returns the TD error.
pub fn sarsa_lambda_step(tab: &mut TabularQ, tr: &SarsaTransition, p: &SarsaParams) -> Result<f64> {
    tab.check(tr.obs, tr.action)?;
    tab.check(tr.next_obs, tr.next_action)?;
    let td = tr.reward + p.gamma * tab.q(tr.next_obs, tr.next_action) - tab.q(tr.obs, tr.action);
    let cell = tr.obs * tab.n_actions + tr.action;
    match tab.traces.iter_mut().find(|(c, _)| *c == cell) {
        Some(entry) => entry.1 = 1.0,
        None => tab.traces.push((cell, 1.0)),
    }
    let decay = p.gamma * p.lambda;
    let q = &mut tab.q;
    tab.traces.retain_mut(|(c, e)| {
        q[*c] += p.alpha * td * *e;
        *e *= decay;
        *e >= TRACE_CUTOFF
    });
    Ok(td)
}

/// dSARSA: the credited action is the oldest queued one (the executed action when there is no
/// delay). `queue` and `next_queue` are grid indices, oldest first.
#[allow(clippy::too_many_arguments)]
pub fn dsarsa_step(
    tab: &mut TabularQ,
    delay: usize,
    obs: usize,
    queue: &[usize],
    executed: usize,
    reward: f64,
    next_obs: usize,
    next_queue: &[usize],
    next_executed: usize,
    p: &SarsaParams,
) -> Result<f64> {
    let credit = |q: &[usize], now: usize| -> Result<usize> {
        if delay == 0 {
            return Ok(now);
        }
        q.first()
            .copied()
            .ok_or_else(|| Error::State(format!("empty action queue under delay {delay}")))
    };
    let tr = SarsaTransition {
        obs,
        action: credit(queue, executed)?,
        reward,
        next_obs,
        next_action: credit(next_queue, next_executed)?,
    };
    sarsa_lambda_step(tab, &tr, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TabularKind {
    /// Acts and credits on the observed state with the action chosen now.
    Sarsa,
    /// Acts on the observed state, credits the oldest queued action.
    DSarsa,
    /// Acts and credits on the discretized augmented state.
    AugSarsa,
}

impl TabularKind {
    pub fn name(self) -> &'static str {
        match self {
            TabularKind::Sarsa => "sarsa",
            TabularKind::DSarsa => "dsarsa",
            TabularKind::AugSarsa => "aug-sarsa",
        }
    }
}

/// Cell index of an augmented state: the base cell plus, for the augmented learner, the queue
/// in mixed radix.
#[derive(Clone, Debug)]
pub struct ObsCodec {
    pub discretizer: Discretizer,
    pub actions: ActionGrid,
    pub queue_len: usize,
    pub augmented: bool,
}

impl ObsCodec {
    /// Number of observation cells, or `None` on overflow.
    pub fn n_obs(&self) -> Option<usize> {
        let base = self.discretizer.n_cells();
        if !self.augmented {
            return Some(base);
        }
        self.actions
            .len()
            .checked_pow(self.queue_len as u32)
            .and_then(|q| q.checked_mul(base))
    }

    pub fn index(&self, x: &AugmentedState) -> Result<usize> {
        let mut idx = self.discretizer.index(&x.base_state)?;
        if self.augmented {
            let base = self.discretizer.n_cells();
            let mut code = 0;
            for a in &x.action_queue {
                code = code * self.actions.len() + self.actions.index(a)?;
            }
            idx += base * code;
        }
        Ok(idx)
    }

    pub fn queue_indices(&self, x: &AugmentedState) -> Result<Vec<usize>> {
        x.action_queue.iter().map(|a| self.actions.index(a)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub episode_length: usize,
    pub eval_steps: usize,
    pub params: SarsaParams,
    /// Largest admissible number of Q entries.
    pub memory_cap: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            iterations: 50,
            steps_per_iteration: 20_000,
            episode_length: crate::envs::pendulum::EPISODE_LENGTH,
            eval_steps: 1000,
            params: SarsaParams::default(),
            memory_cap: 50_000_000,
        }
    }
}

pub struct TabularRun {
    pub curve: Vec<CurveRow>,
    pub table: TabularQ,
    pub codec: ObsCodec,
}

/// Greedy evaluation of a learned table on a delayed environment.
pub fn evaluate_table<E: Environment>(
    denv: &mut DelayedEnv<E>,
    table: &TabularQ,
    codec: &ObsCodec,
    steps: usize,
    episode_length: usize,
) -> Result<EvalStats> {
    evaluate_delayed(
        denv,
        |_, x| Ok(codec.actions.action(table.greedy(codec.index(x)?))),
        steps,
        episode_length,
    )
}

/// Learns with one of the tabular rules, evaluating the greedy policy after every chunk of
/// `steps_per_iteration` steps. The learner sees the delayed reward stream.
#[allow(clippy::too_many_arguments)]
pub fn run_tabular<E>(
    env: E,
    delay: Delay,
    kind: TabularKind,
    discretizer: Discretizer,
    actions: ActionGrid,
    config: &TabularConfig,
    seed: u64,
) -> Result<TabularRun>
where
    E: Environment + Clone,
{
    if config.iterations == 0 || config.steps_per_iteration == 0 || config.episode_length == 0 {
        return Err(Error::config("tabular", "iterations, steps and episode length must be positive"));
    }
    if actions.is_empty() {
        return Err(Error::config("actions", "the action grid is empty"));
    }
    let codec = ObsCodec {
        discretizer,
        actions,
        queue_len: delay.queue_len(),
        augmented: kind == TabularKind::AugSarsa,
    };
    let n_actions = codec.actions.len();
    let cells = codec
        .n_obs()
        .and_then(|n| n.checked_mul(n_actions))
        .filter(|c| *c <= config.memory_cap)
        .ok_or_else(|| {
            Error::Capability(format!(
                "table needs {} x {}^{} x {} entries, above the cap of {}",
                codec.discretizer.n_cells(),
                n_actions,
                codec.queue_len,
                n_actions,
                config.memory_cap
            ))
        })?;
    let mut table = TabularQ::new(cells / n_actions, n_actions);
    let mut denv = DelayedEnv::new(env.clone(), delay, derive_seed(seed, 1))?;
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let p = config.params;
    let mut curve = Vec::with_capacity(config.iterations);

    let mut x = denv.reset();
    let mut in_episode = 0;
    let mut o = codec.index(&x)?;
    let mut a = table.epsilon_greedy(o, p.epsilon, &mut rng);
    for i in 1..=config.iterations {
        let mut abs_td = 0.0;
        for _ in 0..config.steps_per_iteration {
            let step = denv.step(&codec.actions.action(a))?;
            let next_o = codec.index(&step.observation)?;
            let next_a = table.epsilon_greedy(next_o, p.epsilon, &mut rng);
            let td = match kind {
                TabularKind::DSarsa => dsarsa_step(
                    &mut table,
                    delay.steps,
                    o,
                    &codec.queue_indices(&x)?,
                    a,
                    step.observed_reward,
                    next_o,
                    &codec.queue_indices(&step.observation)?,
                    next_a,
                    &p,
                )?,
                _ => sarsa_lambda_step(
                    &mut table,
                    &SarsaTransition {
                        obs: o,
                        action: a,
                        reward: step.observed_reward,
                        next_obs: next_o,
                        next_action: next_a,
                    },
                    &p,
                )?,
            };
            abs_td += td.abs();
            in_episode += 1;
            if in_episode == config.episode_length || step.terminal {
                table.reset_traces();
                x = denv.reset();
                in_episode = 0;
                o = codec.index(&x)?;
                a = table.epsilon_greedy(o, p.epsilon, &mut rng);
            } else {
                x = step.observation;
                o = next_o;
                a = next_a;
            }
        }
        let mut eval_env = DelayedEnv::new(env.clone(), delay, derive_seed(seed, (1 << 32) + i as u64))?;
        let eval = evaluate_table(&mut eval_env, &table, &codec, config.eval_steps, config.episode_length)?;
        curve.push(CurveRow {
            iteration: i,
            env_steps: (i * config.steps_per_iteration) as u64,
            mean_return: eval.mean,
            std_return: eval.std,
            train_loss: abs_td / config.steps_per_iteration as f64,
            seed,
            config_hash: String::new(),
        });
    }
    Ok(TabularRun { curve, table, codec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Pendulum;
    use crate::envs::PendulumState;

    #[test]
    fn zero_td_leaves_table_unchanged() {
        let mut tab = TabularQ::new(2, 2);
        let p = SarsaParams::default();
        let before = tab.clone();
        let tr = SarsaTransition {
            obs: 0,
            action: 1,
            reward: 0.0,
            next_obs: 1,
            next_action: 0,
        };
        assert_eq!(sarsa_lambda_step(&mut tab, &tr, &p).unwrap(), 0.0);
        assert_eq!(tab.values(), before.values());
    }

    #[test]
    fn single_update_moves_by_alpha_td() {
        let mut tab = TabularQ::new(2, 2);
        let p = SarsaParams::default();
        let tr = SarsaTransition {
            obs: 0,
            action: 1,
            reward: 2.0,
            next_obs: 1,
            next_action: 0,
        };
        sarsa_lambda_step(&mut tab, &tr, &p).unwrap();
        assert_eq!(tab.q(0, 1), 0.2);
        assert_eq!(tab.values().iter().filter(|q| **q != 0.0).count(), 1);
        assert!((tab.trace(0, 1) - p.gamma * p.lambda).abs() < 1e-15);
        // A second step propagates the new TD error back along the trace.
        let tr2 = SarsaTransition {
            obs: 1,
            action: 0,
            reward: 1.0,
            next_obs: 1,
            next_action: 0,
        };
        sarsa_lambda_step(&mut tab, &tr2, &p).unwrap();
        assert!((tab.q(1, 0) - 0.1).abs() < 1e-15);
        assert!((tab.q(0, 1) - (0.2 + 0.1 * p.gamma * p.lambda)).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_is_config_error() {
        let mut tab = TabularQ::new(2, 2);
        let tr = SarsaTransition {
            obs: 2,
            action: 0,
            reward: 0.0,
            next_obs: 0,
            next_action: 0,
        };
        assert!(matches!(
            sarsa_lambda_step(&mut tab, &tr, &SarsaParams::default()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn dsarsa_credit_rule() {
        let p = SarsaParams::default();
        let mut tab = TabularQ::new(2, 3);
        dsarsa_step(&mut tab, 1, 0, &[2], 1, 1.0, 1, &[1], 0, &p).unwrap();
        assert_eq!(tab.q(0, 2), 0.1);
        assert_eq!(tab.q(0, 1), 0.0);
        assert!(matches!(
            dsarsa_step(&mut tab, 1, 0, &[], 1, 1.0, 1, &[1], 0, &p),
            Err(Error::State(_))
        ));
        // Without delay it is plain SARSA on the executed action.
        let mut a = TabularQ::new(2, 3);
        let mut b = TabularQ::new(2, 3);
        dsarsa_step(&mut a, 0, 0, &[], 1, 1.0, 1, &[], 2, &p).unwrap();
        let tr = SarsaTransition {
            obs: 0,
            action: 1,
            reward: 1.0,
            next_obs: 1,
            next_action: 2,
        };
        sarsa_lambda_step(&mut b, &tr, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pendulum_cells() {
        let d = Discretizer::pendulum(15);
        assert_eq!(d.n_cells(), 225);
        let up = d.index(&PendulumState::new(0.0, 0.0).to_state()).unwrap();
        assert_eq!(up, 7 * 15 + 7);
        let edge = d.index(&PendulumState::new(PI, 8.0).to_state()).unwrap();
        assert_eq!(edge, 224);
        assert_eq!(ActionGrid::pendulum().index(&Action::scalar(1.7)).unwrap(), 2);
    }

    #[test]
    fn augmented_table_size_and_cap() {
        let codec = ObsCodec {
            discretizer: Discretizer::Finite { n: 15 },
            actions: ActionGrid::Discrete { n: 3 },
            queue_len: 5,
            augmented: true,
        };
        assert_eq!(codec.n_obs(), Some(3645));
        let config = TabularConfig {
            memory_cap: 1000,
            iterations: 1,
            steps_per_iteration: 1,
            ..TabularConfig::default()
        };
        let err = run_tabular(
            Pendulum::new(),
            Delay::integer(5),
            TabularKind::AugSarsa,
            Discretizer::pendulum(15),
            ActionGrid::pendulum(),
            &config,
            0,
        )
        .err()
        .unwrap();
        match err {
            Error::Capability(msg) => assert!(msg.contains("225 x 3^5"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let config = TabularConfig {
            iterations: 2,
            steps_per_iteration: 500,
            eval_steps: 200,
            ..TabularConfig::default()
        };
        let go = || {
            run_tabular(
                Pendulum::new(),
                Delay::integer(2),
                TabularKind::DSarsa,
                Discretizer::pendulum(15),
                ActionGrid::pendulum(),
                &config,
                3,
            )
            .unwrap()
        };
        let (a, b) = (go(), go());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.table, b.table);
    }
}
