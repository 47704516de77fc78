//! Delayed imitation with dataset aggregation (DIDA).
//!
//! An undelayed expert labels every visited step with its action at the true current state;
//! the imitator learns to predict that label from the augmented state the delayed agent
//! actually observes. Data collection mixes the two policies with a per-iteration weight
//! `beta_i` and the dataset keeps the last `K` iterations.

mod dataset;
mod model;

pub use dataset::{beta_weight, BetaSchedule, ImitationDataset};
pub use model::{Head, ModelConfig, PolicyModel};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{CurveRow, EvalStats};
use crate::delay::{AugmentedState, Delay, DelayedEnv};
use crate::error::{Error, Result};
use crate::experts::Expert;
use crate::mdp::{derive_seed, rng_from_seed, Action, ActionSpace, Environment, SimRng};

/// How expert actions become regression or classification targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionTarget {
    /// Box actions mapped onto `[-1, 1]` and regressed with squared error.
    Scaled,
    /// Discrete actions as classes with cross-entropy.
    Class,
    /// Discrete actions regressed on a real embedding; the executed action is the nearest one.
    Embedded(Vec<f64>),
}

impl ActionTarget {
    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Box { .. } => ActionTarget::Scaled,
            ActionSpace::Discrete { .. } => ActionTarget::Class,
        }
    }
}

/// A [`PolicyModel`] together with the action space it acts in.
#[derive(Clone, Debug)]
pub struct Imitator {
    model: PolicyModel,
    space: ActionSpace,
    target: ActionTarget,
}

impl Imitator {
    pub fn new(
        input_dim: usize,
        space: ActionSpace,
        target: ActionTarget,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let head = match (&space, &target) {
            (ActionSpace::Box { low, .. }, ActionTarget::Scaled) => Head::Regression { dim: low.len() },
            (ActionSpace::Discrete { n }, ActionTarget::Class) => Head::Classification { classes: *n },
            (ActionSpace::Discrete { n }, ActionTarget::Embedded(e)) if e.len() == *n => {
                Head::Regression { dim: 1 }
            }
            _ => {
                return Err(Error::config(
                    "dida.target",
                    format!("{target:?} targets do not fit {space:?}"),
                ))
            }
        };
        Ok(Imitator {
            model: PolicyModel::new(input_dim, head, config, seed)?,
            space,
            target,
        })
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut PolicyModel {
        &mut self.model
    }

    pub fn target(&self) -> &ActionTarget {
        &self.target
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    /// Appends the training target for an expert action.
    pub fn label(&self, a: &Action, out: &mut Vec<f32>) -> Result<()> {
        match (&self.target, a) {
            (ActionTarget::Scaled, _) => {
                let mut enc = Vec::with_capacity(self.space.dim());
                self.space.encode(&self.space.clamp(a), &mut enc)?;
                out.extend(enc.iter().map(|x| *x as f32));
            }
            (ActionTarget::Class, Action::Discrete(i)) if self.space.contains(a) => out.push(*i as f32),
            (ActionTarget::Embedded(e), Action::Discrete(i)) if *i < e.len() => out.push(e[*i] as f32),
            _ => {
                return Err(Error::config(
                    "expert",
                    format!("expert action {a:?} does not belong to {:?}", self.space),
                ))
            }
        }
        Ok(())
    }

    /// Raw network output (scaled box action, class scores or embedded action).
    pub fn output(&self, input: &[f32]) -> Vec<f32> {
        self.model.predict(input)
    }

    /// Greedy action: box outputs are mapped back and clamped, classes take the argmax, and
    /// embedded outputs snap to the nearest embedded action (lowest index on ties).
    pub fn act(&self, input: &[f32]) -> Action {
        let out = self.output(input);
        match (&self.target, &self.space) {
            (ActionTarget::Scaled, ActionSpace::Box { low, high }) => Action::Continuous(
                out.iter()
                    .zip(low.iter().zip(high))
                    .map(|(y, (lo, hi))| (lo + (*y as f64 + 1.0) * 0.5 * (hi - lo)).clamp(*lo, *hi))
                    .collect(),
            ),
            (ActionTarget::Embedded(e), _) => {
                let y = out[0] as f64;
                let best = e
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| (*a - y).abs().total_cmp(&(*b - y).abs()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                Action::Discrete(best)
            }
            _ => {
                let best = out
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |acc, (i, z)| if *z > acc.1 { (i, *z) } else { acc })
                    .0;
                Action::Discrete(best)
            }
        }
    }

    /// Trains on every retained sample for `steps` minibatch updates.
    pub fn train(&mut self, dataset: &ImitationDataset, steps: usize, rng: &mut SimRng) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Usage("cannot train the imitator on an empty dataset".into()));
        }
        let (inputs, targets) = dataset.flatten();
        self.model.train(&inputs, &targets, steps, rng)
    }
}

/// Encodes an augmented state into the imitator's `f32` input layout.
pub fn encode_augmented<E: Environment>(denv: &DelayedEnv<E>, x: &AugmentedState, out: &mut Vec<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(denv.encoded_dim());
    denv.encode(x, &mut buf)?;
    out.clear();
    out.extend(buf.iter().map(|v| *v as f32));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DidaConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub episode_length: usize,
    /// Evaluation steps after each iteration, split into episodes of `episode_length`.
    pub eval_steps: usize,
    /// Minibatch updates per iteration; the model is warm-started across iterations.
    pub train_steps: usize,
    /// Number of most recent iterations kept in the dataset.
    pub retention: usize,
    pub beta: BetaSchedule,
    pub model: ModelConfig,
    /// Steps spent training the expert, added to the step axis. Set by the harness from the
    /// expert section rather than read from configs.
    #[serde(skip)]
    pub expert_steps: u64,
}

impl Default for DidaConfig {
    fn default() -> Self {
        DidaConfig {
            iterations: 50,
            steps_per_iteration: 2000,
            episode_length: crate::envs::pendulum::EPISODE_LENGTH,
            eval_steps: 1000,
            train_steps: 500,
            retention: 10,
            beta: BetaSchedule::FirstOnly,
            model: ModelConfig::default(),
            expert_steps: 0,
        }
    }
}

impl DidaConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("dida.iterations", self.iterations),
            ("dida.steps_per_iteration", self.steps_per_iteration),
            ("dida.episode_length", self.episode_length),
            ("dida.eval_steps", self.eval_steps),
            ("dida.retention", self.retention),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        self.beta.validate()
    }
}

/// What happened during one round of data collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub steps: usize,
    pub expert_actions: usize,
    pub imitator_actions: usize,
    pub episodes: usize,
}

/// Collects `n_steps` labelled samples. Each step the expert is queried on the hidden current
/// state; with probability `1 - beta` the imitator's action is executed instead. The expert's
/// label is stored either way. The environment is reset at the start and every
/// `episode_length` steps (or on termination).
#[allow(clippy::too_many_arguments)]
pub fn dida_iteration<E, X>(
    denv: &mut DelayedEnv<E>,
    expert: &X,
    imitator: &Imitator,
    beta: f64,
    n_steps: usize,
    episode_length: usize,
    dataset: &mut ImitationDataset,
    rng: &mut SimRng,
) -> Result<IterationStats>
where
    E: Environment,
    X: Expert + ?Sized,
{
    if episode_length == 0 {
        return Err(Error::config("dida.episode_length", "must be positive"));
    }
    dataset.begin_iteration();
    let mut stats = IterationStats::default();
    let mut x = denv.reset();
    let mut in_episode = 0;
    let mut input = Vec::new();
    let mut label = Vec::new();
    for _ in 0..n_steps {
        if in_episode == episode_length {
            x = denv.reset();
            in_episode = 0;
            stats.episodes += 1;
        }
        let truth = denv
            .true_state()
            .ok_or_else(|| Error::State("delayed environment has no current state".into()))?;
        let expert_action = expert.action(&truth);
        if !fits(&denv.action_space(), &expert_action) {
            return Err(Error::config(
                "expert",
                format!("expert action {expert_action:?} does not fit {:?}", denv.action_space()),
            ));
        }
        encode_augmented(denv, &x, &mut input)?;
        label.clear();
        imitator.label(&expert_action, &mut label)?;
        dataset.push(&input, &label)?;
        let executed = if rng.random::<f64>() < beta {
            stats.expert_actions += 1;
            expert_action
        } else {
            stats.imitator_actions += 1;
            imitator.act(&input)
        };
        let step = denv.step(&executed)?;
        x = step.observation;
        in_episode += 1;
        stats.steps += 1;
        if step.terminal {
            in_episode = episode_length;
        }
    }
    stats.episodes += 1;
    Ok(stats)
}

fn fits(space: &ActionSpace, a: &Action) -> bool {
    match (space, a) {
        (ActionSpace::Discrete { n }, Action::Discrete(i)) => i < n,
        (ActionSpace::Box { low, .. }, Action::Continuous(v)) => v.len() == low.len() && v.iter().all(|x| x.is_finite()),
        _ => false,
    }
}

/// Runs a delayed policy for `steps` steps in episodes of `episode_length` and reports the
/// undiscounted per-episode returns. Warm-up transitions played out during reset are not
/// part of any episode.
pub fn evaluate_delayed<E, F>(
    denv: &mut DelayedEnv<E>,
    mut act: F,
    steps: usize,
    episode_length: usize,
) -> Result<EvalStats>
where
    E: Environment,
    F: FnMut(&DelayedEnv<E>, &AugmentedState) -> Result<Action>,
{
    if steps == 0 || episode_length == 0 {
        return Err(Error::config("eval_steps", "evaluation needs a positive budget"));
    }
    let mut returns = Vec::new();
    let mut done = 0;
    while done < steps {
        let mut x = denv.reset();
        let mut total = 0.0;
        for _ in 0..episode_length.min(steps - done) {
            let a = act(denv, &x)?;
            let step = denv.step(&a)?;
            total += step.reward;
            done += 1;
            x = step.observation;
            if step.terminal {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvalStats::from_returns(returns))
}

/// Greedy evaluation of an imitator.
pub fn evaluate_imitator<E: Environment>(
    denv: &mut DelayedEnv<E>,
    imitator: &Imitator,
    steps: usize,
    episode_length: usize,
) -> Result<EvalStats> {
    let mut input = Vec::new();
    evaluate_delayed(
        denv,
        |d, x| {
            encode_augmented(d, x, &mut input)?;
            Ok(imitator.act(&input))
        },
        steps,
        episode_length,
    )
}

/// Evaluates an expert that sees the hidden current state, i.e. the undelayed reference.
pub fn evaluate_expert<E, X>(env: E, expert: &X, steps: usize, episode_length: usize, seed: u64) -> Result<EvalStats>
where
    E: Environment,
    X: Expert + ?Sized,
{
    let mut denv = DelayedEnv::new(env, Delay::integer(0), seed)?;
    evaluate_delayed(
        &mut denv,
        |d, _| {
            d.true_state()
                .map(|s| expert.action(&s))
                .ok_or_else(|| Error::State("no current state".into()))
        },
        steps,
        episode_length,
    )
}

pub struct DidaRun {
    pub curve: Vec<CurveRow>,
    pub imitator: Imitator,
    pub dataset: ImitationDataset,
}

const COLLECT_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const MIX_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 1 << 32;

/// The outer loop: collect, aggregate, train, evaluate, once per iteration.
pub fn run_dida<E, X>(
    env: E,
    delay: Delay,
    expert: &X,
    config: &DidaConfig,
    target: Option<ActionTarget>,
    seed: u64,
) -> Result<DidaRun>
where
    E: Environment + Clone,
    X: Expert + ?Sized,
{
    config.validate()?;
    let mut denv = DelayedEnv::new(env.clone(), delay, derive_seed(seed, COLLECT_STREAM))?;
    let space = denv.action_space();
    let target = target.unwrap_or_else(|| ActionTarget::for_space(&space));
    let mut imitator = Imitator::new(
        denv.encoded_dim(),
        space,
        target,
        config.model.clone(),
        derive_seed(seed, MODEL_STREAM),
    )?;
    let mut dataset = ImitationDataset::new(
        denv.encoded_dim(),
        imitator.model().head().target_dim(),
        config.retention,
    )?;
    let mut train_rng = rng_from_seed(derive_seed(seed, TRAIN_STREAM));
    let mut mix_rng = rng_from_seed(derive_seed(seed, MIX_STREAM));
    let mut curve = Vec::with_capacity(config.iterations);
    for i in 1..=config.iterations {
        let beta = beta_weight(&config.beta, i)?;
        dida_iteration(
            &mut denv,
            expert,
            &imitator,
            beta,
            config.steps_per_iteration,
            config.episode_length,
            &mut dataset,
            &mut mix_rng,
        )?;
        let loss = imitator.train(&dataset, config.train_steps, &mut train_rng)?;
        let mut eval_env = DelayedEnv::new(env.clone(), delay, derive_seed(seed, EVAL_STREAM + i as u64))?;
        let eval = evaluate_imitator(&mut eval_env, &imitator, config.eval_steps, config.episode_length)?;
        curve.push(CurveRow {
            iteration: i,
            env_steps: config.expert_steps + (i * config.steps_per_iteration) as u64,
            mean_return: eval.mean,
            std_return: eval.std,
            train_loss: loss,
            seed,
            config_hash: String::new(),
        });
    }
    Ok(DidaRun {
        curve,
        imitator,
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::wrap_delayed;
    use crate::envs::Pendulum;
    use crate::experts::PendulumEnergyExpert;
    use crate::mdp::{FiniteEnv, FiniteMdp, State};

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden: vec![16],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn encoding_layout() {
        let mut denv = wrap_delayed(Pendulum::new(), 2, 0);
        denv.reset();
        let x = AugmentedState {
            base_state: State::Continuous(vec![0.0, 0.0]),
            action_queue: vec![Action::scalar(0.0), Action::scalar(0.0)],
        };
        let mut out = Vec::new();
        encode_augmented(&denv, &x, &mut out).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        for d in 0..6 {
            let denv = wrap_delayed(Pendulum::new(), d, 0);
            assert_eq!(denv.encoded_dim(), 3 + d);
        }
        let bad = AugmentedState {
            action_queue: vec![Action::scalar(0.0)],
            ..x
        };
        assert!(matches!(encode_augmented(&denv, &bad, &mut out), Err(Error::Config { .. })));
    }

    #[test]
    fn scaled_targets_round_trip() {
        let imitator = Imitator::new(3, ActionSpace::scalar(-2.0, 2.0), ActionTarget::Scaled, small_config(), 0).unwrap();
        let mut label = Vec::new();
        imitator.label(&Action::scalar(1.0), &mut label).unwrap();
        assert_eq!(label, vec![0.5]);
        imitator.label(&Action::scalar(9.0), &mut label).unwrap();
        assert_eq!(label[1], 1.0);
        assert!(imitator.label(&Action::Discrete(0), &mut label).is_err());
        let a = imitator.act(&[0.3, -0.2, 0.1]).first();
        assert!((-2.0..=2.0).contains(&a));
    }

    fn collect(beta: f64) -> (Vec<Action>, Vec<Action>, ImitationDataset, IterationStats) {
        let expert = PendulumEnergyExpert::default();
        let mut denv = wrap_delayed(Pendulum::new(), 3, 5);
        let imitator = Imitator::new(6, ActionSpace::scalar(-2.0, 2.0), ActionTarget::Scaled, small_config(), 1).unwrap();
        let mut dataset = ImitationDataset::new(6, 1, 10).unwrap();
        let stats = dida_iteration(&mut denv, &expert, &imitator, beta, 250, 100, &mut dataset, &mut rng_from_seed(2)).unwrap();
        // Replay the same seeds to recover which actions were executed and which were queried.
        let mut replay = wrap_delayed(Pendulum::new(), 3, 5);
        let mut x = replay.reset();
        let mut expert_actions = Vec::new();
        let mut imitator_actions = Vec::new();
        let mut input = Vec::new();
        let mut rng = rng_from_seed(2);
        for t in 0..250 {
            if t > 0 && t % 100 == 0 {
                x = replay.reset();
            }
            let e = expert.action(&replay.true_state().unwrap());
            encode_augmented(&replay, &x, &mut input).unwrap();
            let executed = if rng.random::<f64>() < beta { e.clone() } else { imitator.act(&input) };
            expert_actions.push(e);
            imitator_actions.push(executed.clone());
            x = replay.step(&executed).unwrap().observation;
        }
        (expert_actions, imitator_actions, dataset, stats)
    }

    #[test]
    fn expert_only_collection() {
        let (expert, executed, dataset, stats) = collect(1.0);
        assert_eq!(expert, executed);
        assert_eq!(dataset.len(), 250);
        assert_eq!(stats.expert_actions, 250);
        assert_eq!(stats.episodes, 3);
        // Labels are the expert's actions on the hidden state.
        let (_, targets) = dataset.flatten();
        for (t, a) in targets.iter().zip(&expert) {
            assert!((*t as f64 - a.first() / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn imitator_only_collection_keeps_expert_labels() {
        let (expert, executed, dataset, stats) = collect(0.0);
        assert_eq!(stats.imitator_actions, 250);
        assert_ne!(expert, executed);
        let (_, targets) = dataset.flatten();
        for (t, a) in targets.iter().zip(&expert) {
            assert!((*t as f64 - a.first() / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn evaluation_episodes() {
        let expert = PendulumEnergyExpert::default();
        let stats = evaluate_expert(Pendulum::new(), &expert, 1000, 200, 3).unwrap();
        assert_eq!(stats.episode_returns.len(), 5);
        assert!(stats.mean > -400.0, "{stats:?}");
    }

    #[test]
    fn run_produces_one_row_per_iteration() {
        let mdp = FiniteMdp::new(
            2,
            2,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
            0.9,
            None,
            None,
            None,
        )
        .unwrap();
        let expert = crate::experts::value_iteration_expert(&mdp, 1e-9).unwrap();
        let config = DidaConfig {
            iterations: 3,
            steps_per_iteration: 50,
            episode_length: 10,
            eval_steps: 20,
            train_steps: 20,
            model: small_config(),
            ..DidaConfig::default()
        };
        let run = run_dida(FiniteEnv::new(mdp.clone()), Delay::integer(1), &expert, &config, None, 7).unwrap();
        assert_eq!(run.curve.len(), 3);
        assert_eq!(run.curve[2].env_steps, 150);
        assert_eq!(run.dataset.len(), 150);
        let again = run_dida(FiniteEnv::new(mdp), Delay::integer(1), &expert, &config, None, 7).unwrap();
        assert_eq!(run.curve, again.curve);
    }
}
