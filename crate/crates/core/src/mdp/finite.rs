use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, Environment, ObservationSpace, Policy, SimRng, State, Step};
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Explicit-tensor MDP with 1-D embeddings of states and actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiniteMdpFile", into = "FiniteMdpFile")]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `p[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `r[s][a]`, flattened.
    rewards: Vec<f64>,
    state_embedding: Vec<f64>,
    action_embedding: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

/// On-disk layout: nested tensors for readability.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct FiniteMdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
    state_embedding: Vec<f64>,
    action_embedding: Vec<f64>,
    initial: Vec<f64>,
}

impl TryFrom<FiniteMdpFile> for FiniteMdp {
    type Error = Error;

    fn try_from(f: FiniteMdpFile) -> Result<Self> {
        if f.transitions.len() != f.n_states || f.rewards.len() != f.n_states {
            return Err(Error::Parse("tensor leading dimension differs from n_states".into()));
        }
        let mut transitions = Vec::with_capacity(f.n_states * f.n_actions * f.n_states);
        for (s, per_action) in f.transitions.iter().enumerate() {
            if per_action.len() != f.n_actions {
                return Err(Error::Parse(format!("transitions[{s}] has wrong action count")));
            }
            for row in per_action {
                if row.len() != f.n_states {
                    return Err(Error::Parse(format!("transitions[{s}] has a short row")));
                }
                transitions.extend_from_slice(row);
            }
        }
        let mut rewards = Vec::with_capacity(f.n_states * f.n_actions);
        for row in &f.rewards {
            if row.len() != f.n_actions {
                return Err(Error::Parse("rewards row has wrong action count".into()));
            }
            rewards.extend_from_slice(row);
        }
        FiniteMdp::new(
            f.n_states,
            f.n_actions,
            transitions,
            rewards,
            f.gamma,
            Some(f.state_embedding),
            Some(f.action_embedding),
            Some(f.initial),
        )
    }
}

impl From<FiniteMdp> for FiniteMdpFile {
    fn from(m: FiniteMdp) -> Self {
        FiniteMdpFile {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transitions: (0..m.n_states)
                .map(|s| (0..m.n_actions).map(|a| m.row(s, a).to_vec()).collect())
                .collect(),
            rewards: (0..m.n_states)
                .map(|s| (0..m.n_actions).map(|a| m.reward(s, a)).collect())
                .collect(),
            state_embedding: m.state_embedding,
            action_embedding: m.action_embedding,
            initial: m.initial,
        }
    }
}

impl FiniteMdp {
    /// Builds and validates an MDP. Embeddings default to `e[s] = s`, `g[a] = a`; the initial
    /// distribution defaults to uniform.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        state_embedding: Option<Vec<f64>>,
        action_embedding: Option<Vec<f64>>,
        initial: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("mdp", "needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::config("mdp.transitions", "wrong tensor size"));
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::config("mdp.rewards", "wrong table size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("mdp.gamma", format!("{gamma} not in [0, 1)")));
        }
        let state_embedding = state_embedding.unwrap_or_else(|| (0..n_states).map(|s| s as f64).collect());
        let action_embedding =
            action_embedding.unwrap_or_else(|| (0..n_actions).map(|a| a as f64).collect());
        let initial = initial.unwrap_or_else(|| vec![1.0 / n_states as f64; n_states]);
        if state_embedding.len() != n_states || action_embedding.len() != n_actions {
            return Err(Error::config("mdp.embedding", "embedding length mismatch"));
        }
        if initial.len() != n_states {
            return Err(Error::config("mdp.initial", "initial distribution length mismatch"));
        }
        if state_embedding
            .iter()
            .chain(&action_embedding)
            .chain(&rewards)
            .any(|x| !x.is_finite())
        {
            return Err(Error::config("mdp", "embeddings and rewards must be finite"));
        }
        let mdp = FiniteMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            state_embedding,
            action_embedding,
            gamma,
            initial,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(mdp.row(s, a), &format!("mdp.transitions[{s}][{a}]"))?;
            }
        }
        check_distribution(&mdp.initial, "mdp.initial")?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("mdp.gamma", format!("{gamma} not in [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// `p(.|s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn state_embedding(&self) -> &[f64] {
        &self.state_embedding
    }

    pub fn action_embedding(&self) -> &[f64] {
        &self.action_embedding
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn is_deterministic(&self) -> bool {
        self.transitions.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// `b · P[a]` for a distribution `b` over states.
    pub fn push_forward(&self, b: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (s, &w) in b.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.row(s, a)) {
                *o += w * p;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_distribution(p: &[f64], key: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::config(key, "probabilities must be finite and nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL * p.len().max(1) as f64 {
        return Err(Error::config(key, format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Stochastic tabular policy `pi(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::config("policy", "probability table has wrong size"));
        }
        let policy = TabularPolicy {
            n_states,
            n_actions,
            probs,
        };
        for s in 0..n_states {
            check_distribution(policy.row(s), &format!("policy[{s}]"))?;
        }
        Ok(policy)
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        TabularPolicy {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Action of a deterministic row, `None` if the row is stochastic.
    pub fn deterministic_action(&self, s: usize) -> Option<usize> {
        self.row(s).iter().position(|&p| p == 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Policy for TabularPolicy {
    fn act(&self, state: &State, rng: &mut SimRng) -> Action {
        let s = state.index().expect("tabular policy needs a discrete state");
        Action::Discrete(self.sample(s, rng))
    }

    fn observation_space(&self) -> Option<ObservationSpace> {
        Some(ObservationSpace::Discrete { n: self.n_states })
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn check_policy_shape(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::config(
            "policy",
            format!(
                "policy is {}x{} but MDP is {}x{}",
                policy.n_states, policy.n_actions, mdp.n_states, mdp.n_actions
            ),
        ));
    }
    Ok(())
}

/// `(P^pi, r^pi)` under a tabular policy.
fn policy_kernel(mdp: &FiniteMdp, policy: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for (next, q) in mdp.row(s, a).iter().enumerate() {
                p[(s, next)] += w * q;
            }
        }
    }
    (p, r)
}

/// Solves `(I - gamma P^pi) V = r^pi` by LU factorization.
pub fn solve_v_exact(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states;
    let (p, r) = policy_kernel(mdp, policy);
    let a = DMatrix::identity(n, n) - p * mdp.gamma;
    let v = a
        .clone()
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    let residual = (&a * &v - &r).amax();
    let scale = 1.0f64.max(v.amax());
    if residual > SOLVE_RESIDUAL_TOL * scale {
        return Err(Error::Numerical(format!(
            "policy evaluation residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(v.iter().copied().collect())
}

/// `Q(s,a) = r(s,a) + gamma sum_s' p(s'|s,a) V(s')`, returned row-major over `(s, a)`.
pub fn solve_q_exact(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let v = solve_v_exact(mdp, policy)?;
    Ok(q_from_v(mdp, &v))
}

pub(crate) fn q_from_v(mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let next: f64 = mdp.row(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
            q.push(mdp.reward(s, a) + mdp.gamma * next);
        }
    }
    q
}

/// Normalized discounted occupancy `(1 - gamma) rho^T (I - gamma P^pi)^{-1}`.
pub fn discounted_occupancy(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    start: &[f64],
) -> Result<Vec<f64>> {
    check_policy_shape(mdp, policy)?;
    if start.len() != mdp.n_states {
        return Err(Error::config("start", "start distribution length mismatch"));
    }
    let n = mdp.n_states;
    let (p, _) = policy_kernel(mdp, policy);
    let a = (DMatrix::identity(n, n) - p * mdp.gamma).transpose();
    let rhs = DVector::from_iterator(n, start.iter().map(|x| x * (1.0 - mdp.gamma)));
    let d = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    Ok(d.iter().copied().collect())
}

/// Occupancies for every Dirac start at once: row `x` is `(1 - gamma) delta_x^T (I - gamma P^pi)^{-1}`.
pub fn discounted_occupancies(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states;
    let (p, _) = policy_kernel(mdp, policy);
    let a = DMatrix::identity(n, n) - p * mdp.gamma;
    let inv = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    Ok((0..n)
        .map(|x| inv.row(x).iter().map(|v| v * (1.0 - mdp.gamma)).collect())
        .collect())
}

/// Samples a finite MDP; rewards are the mean-reward table.
#[derive(Clone, Debug)]
pub struct FiniteEnv {
    mdp: FiniteMdp,
    state: Option<usize>,
}

impl FiniteEnv {
    pub fn new(mdp: FiniteMdp) -> Self {
        FiniteEnv { mdp, state: None }
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }
}

impl Environment for FiniteEnv {
    fn observation_space(&self) -> ObservationSpace {
        ObservationSpace::Discrete {
            n: self.mdp.n_states,
        }
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            n: self.mdp.n_actions,
        }
    }

    fn reset(&mut self, rng: &mut SimRng) -> State {
        let s = sample_index(&self.mdp.initial, rng);
        self.state = Some(s);
        State::Discrete(s)
    }

    fn step(&mut self, action: &Action, rng: &mut SimRng) -> Result<Step> {
        let s = self
            .state
            .ok_or_else(|| Error::State("step before reset".into()))?;
        let a = match action {
            Action::Discrete(a) if *a < self.mdp.n_actions => *a,
            other => {
                return Err(Error::config("action", format!("invalid action {other:?}")));
            }
        };
        let next = sample_index(self.mdp.row(s, a), rng);
        self.state = Some(next);
        Ok(Step {
            state: State::Discrete(next),
            reward: self.mdp.reward(s, a),
            terminal: false,
        })
    }

    fn state(&self) -> Option<State> {
        self.state.map(State::Discrete)
    }

    fn set_state(&mut self, state: &State) -> Result<()> {
        match state {
            State::Discrete(s) if *s < self.mdp.n_states => {
                self.state = Some(*s);
                Ok(())
            }
            other => Err(Error::config("state", format!("invalid state {other:?}"))),
        }
    }

    fn encode_state(&self, state: &State, out: &mut Vec<f64>) {
        let s = state.index().unwrap_or(usize::MAX);
        out.extend((0..self.mdp.n_states).map(|k| if k == s { 1.0 } else { 0.0 }));
    }

    fn encoded_state_dim(&self) -> usize {
        self.mdp.n_states
    }
}
