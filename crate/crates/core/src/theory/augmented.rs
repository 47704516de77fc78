use crate::delay::{belief_from_indices, queue_indices, AugmentedState};
use crate::error::{Error, Result};
use crate::mdp::{Action, FiniteMdp, State, TabularPolicy};

/// Largest augmented state count accepted by default; the dense kernel has `|X|^2 |A|` entries.
pub const DEFAULT_AUGMENTED_CAP: usize = 5_000;

/// The delayed process of a finite MDP written as an MDP on `X = S x A^delay`.
///
/// Index layout: `x = s * |A|^delay + sum_k a_k |A|^(delay - 1 - k)`, so the oldest queued
/// action is the most significant digit.
#[derive(Clone, Debug)]
pub struct AugmentedMdp {
    base: FiniteMdp,
    delay: usize,
    mdp: FiniteMdp,
    beliefs: Vec<Vec<f64>>,
}

/// Builds the augmented MDP: `p~((s2, a2..ad, a) | (s1, a1..ad), a) = p(s2 | s1, a1)`,
/// `r~(x, a) = sum_s b(s|x) r(s, a)`, initial distribution `mu x uniform queue`, and the state
/// embedding of the base state.
pub fn build_augmented_mdp(mdp: &FiniteMdp, delay: usize, cap: usize) -> Result<AugmentedMdp> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n_queues = na
        .checked_pow(delay as u32)
        .filter(|q| q.checked_mul(ns).is_some_and(|n| n <= cap))
        .ok_or_else(|| {
            Error::Capability(format!(
                "augmented MDP needs {ns} x {na}^{delay} states, above the cap of {cap}"
            ))
        })?;
    let nx = ns * n_queues;
    let decode = |x: usize| -> (usize, Vec<usize>) {
        let s = x / n_queues;
        let mut code = x % n_queues;
        let mut queue = vec![0; delay];
        for k in (0..delay).rev() {
            queue[k] = code % na;
            code /= na;
        }
        (s, queue)
    };
    let mut beliefs = Vec::with_capacity(nx);
    let mut transitions = vec![0.0; nx * na * nx];
    let mut rewards = Vec::with_capacity(nx * na);
    let mut embedding = Vec::with_capacity(nx);
    let mut initial = Vec::with_capacity(nx);
    for x in 0..nx {
        let (s, queue) = decode(x);
        let b = belief_from_indices(mdp, s, &queue);
        for a in 0..na {
            rewards.push(b.iter().enumerate().map(|(s, w)| w * mdp.reward(s, a)).sum());
            let row = &mut transitions[(x * na + a) * nx..][..nx];
            if delay == 0 {
                row.copy_from_slice(mdp.row(s, a));
                continue;
            }
            // Shift the queue: drop the oldest action, append `a`.
            let mut tail = 0;
            for q in &queue[1..] {
                tail = tail * na + q;
            }
            tail = tail * na + a;
            for (s2, p) in mdp.row(s, queue[0]).iter().enumerate() {
                row[s2 * n_queues + tail] += p;
            }
        }
        embedding.push(mdp.state_embedding()[s]);
        initial.push(mdp.initial()[s] / n_queues as f64);
        beliefs.push(b);
    }
    let aug = FiniteMdp::new(
        nx,
        na,
        transitions,
        rewards,
        mdp.gamma(),
        Some(embedding),
        Some(mdp.action_embedding().to_vec()),
        Some(initial),
    )?;
    Ok(AugmentedMdp {
        base: mdp.clone(),
        delay,
        mdp: aug,
        beliefs,
    })
}

impl AugmentedMdp {
    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn base(&self) -> &FiniteMdp {
        &self.base
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_queues(&self) -> usize {
        self.mdp.n_states() / self.base.n_states()
    }

    pub fn encode(&self, s: usize, queue: &[usize]) -> Result<usize> {
        let na = self.base.n_actions();
        if s >= self.base.n_states() || queue.len() != self.delay || queue.iter().any(|a| *a >= na) {
            return Err(Error::config(
                "augmented_state",
                format!("({s}, {queue:?}) is not a state of the delay-{} process", self.delay),
            ));
        }
        Ok(s * self.n_queues() + queue.iter().fold(0, |code, a| code * na + a))
    }

    pub fn decode(&self, x: usize) -> (usize, Vec<usize>) {
        let na = self.base.n_actions();
        let mut code = x % self.n_queues();
        let mut queue = vec![0; self.delay];
        for k in (0..self.delay).rev() {
            queue[k] = code % na;
            code /= na;
        }
        (x / self.n_queues(), queue)
    }

    pub fn index_of(&self, x: &AugmentedState) -> Result<usize> {
        let s = x
            .base_state
            .index()
            .ok_or_else(|| Error::config("augmented_state", "base state must be discrete"))?;
        self.encode(s, &queue_indices(&self.base, &x.action_queue)?)
    }

    pub fn augmented_state(&self, x: usize) -> AugmentedState {
        let (s, queue) = self.decode(x);
        AugmentedState {
            base_state: State::Discrete(s),
            action_queue: queue.into_iter().map(Action::Discrete).collect(),
        }
    }

    /// Exact belief over current base states.
    pub fn belief(&self, x: usize) -> &[f64] {
        &self.beliefs[x]
    }

    pub fn beliefs(&self) -> &[Vec<f64>] {
        &self.beliefs
    }

    /// The policy DIDA targets: `pi~(a|x) = sum_s b(s|x) pi_E(a|s)`.
    pub fn belief_policy(&self, expert: &TabularPolicy) -> Result<TabularPolicy> {
        self.check_base_policy(expert)?;
        let na = self.base.n_actions();
        let mut probs = Vec::with_capacity(self.n_states() * na);
        for b in &self.beliefs {
            for a in 0..na {
                probs.push(b.iter().enumerate().map(|(s, w)| w * expert.prob(s, a)).sum());
            }
        }
        normalize_rows(&mut probs, na);
        TabularPolicy::new(self.n_states(), na, probs)
    }

    /// A memoryless policy (acting on the observed base state) as a policy on `X`.
    pub fn lift_memoryless(&self, policy: &TabularPolicy) -> Result<TabularPolicy> {
        self.check_base_policy(policy)?;
        let probs = (0..self.n_states())
            .flat_map(|x| policy.row(self.decode(x).0).to_vec())
            .collect();
        TabularPolicy::new(self.n_states(), self.base.n_actions(), probs)
    }

    /// `E_{s ~ b(.|x)} f(s)` for every `x`.
    pub fn belief_average(&self, f: &[f64]) -> Vec<f64> {
        self.beliefs
            .iter()
            .map(|b| b.iter().zip(f).map(|(w, v)| w * v).sum())
            .collect()
    }

    fn check_base_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states() != self.base.n_states() || policy.n_actions() != self.base.n_actions() {
            return Err(Error::config("policy", "policy does not match the base MDP"));
        }
        Ok(())
    }
}

/// Removes rounding drift so each row sums to one.
fn normalize_rows(probs: &mut [f64], width: usize) {
    for row in probs.chunks_mut(width) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::belief_exact;
    use crate::envs::{make_chain_mdp, ChainCosts};
    use crate::mdp::solve_v_exact;

    fn chain() -> FiniteMdp {
        make_chain_mdp(4, 0.3, ChainCosts::default(), 0.9).unwrap()
    }

    #[test]
    fn zero_delay_is_identity() {
        let mdp = chain();
        let aug = build_augmented_mdp(&mdp, 0, DEFAULT_AUGMENTED_CAP).unwrap();
        assert_eq!(aug.mdp(), &mdp);
        let policy = TabularPolicy::uniform(4, 3);
        assert_eq!(
            solve_v_exact(aug.mdp(), &policy).unwrap(),
            solve_v_exact(&mdp, &policy).unwrap()
        );
        let expert = TabularPolicy::deterministic(3, &[2, 2, 1, 0]);
        assert_eq!(aug.belief_policy(&expert).unwrap(), expert);
    }

    #[test]
    fn size_codec_and_stochasticity() {
        let mdp = FiniteMdp::new(2, 2, vec![0.5; 8], vec![0.0, 1.0, 2.0, 3.0], 0.9, None, None, None).unwrap();
        let aug = build_augmented_mdp(&mdp, 3, DEFAULT_AUGMENTED_CAP).unwrap();
        assert_eq!(aug.n_states(), 16);
        for x in 0..16 {
            let (s, q) = aug.decode(x);
            assert_eq!(aug.encode(s, &q).unwrap(), x);
            assert_eq!(aug.index_of(&aug.augmented_state(x)).unwrap(), x);
            for a in 0..2 {
                assert!((aug.mdp().row(x, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(
            build_augmented_mdp(&mdp, 20, DEFAULT_AUGMENTED_CAP),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn beliefs_match_delay_machinery_and_rewards_average() {
        let mdp = chain();
        let aug = build_augmented_mdp(&mdp, 2, DEFAULT_AUGMENTED_CAP).unwrap();
        for x in 0..aug.n_states() {
            let b = belief_exact(&mdp, &aug.augmented_state(x)).unwrap();
            assert_eq!(b, aug.belief(x));
            for a in 0..3 {
                let r: f64 = (0..4).map(|s| b[s] * mdp.reward(s, a)).sum();
                assert!((aug.mdp().reward(x, a) - r).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn belief_policy_mixture() {
        // Uniform belief over two states whose expert actions differ.
        let mdp = FiniteMdp::new(2, 2, vec![0.5; 8], vec![0.0; 4], 0.9, None, None, None).unwrap();
        let aug = build_augmented_mdp(&mdp, 1, DEFAULT_AUGMENTED_CAP).unwrap();
        let expert = TabularPolicy::deterministic(2, &[0, 1]);
        let pi = aug.belief_policy(&expert).unwrap();
        for x in 0..aug.n_states() {
            assert_eq!(pi.row(x), &[0.5, 0.5]);
        }
    }

    #[test]
    fn deterministic_mdp_belief_policy_follows_rollout() {
        let mdp = make_chain_mdp(5, 0.0, ChainCosts::default(), 0.9).unwrap();
        let aug = build_augmented_mdp(&mdp, 2, DEFAULT_AUGMENTED_CAP).unwrap();
        let expert = TabularPolicy::deterministic(3, &[2, 2, 1, 0, 0]);
        let pi = aug.belief_policy(&expert).unwrap();
        let x = aug.encode(1, &[2, 2]).unwrap();
        assert_eq!(pi.deterministic_action(x), Some(0));
        // 4 -> 3 -> 3
        let x = aug.encode(4, &[0, 1]).unwrap();
        assert_eq!(pi.deterministic_action(x), Some(0));
        // 4 -> 3 -> 2
        let x = aug.encode(4, &[0, 0]).unwrap();
        assert_eq!(pi.deterministic_action(x), Some(1));
    }
}
