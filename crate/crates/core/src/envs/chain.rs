use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::theory::wasserstein::{wasserstein_1d, wasserstein_to_dirac};

/// Reward shape of a chain: `r(s, a) = -state_weight |e[s] - target| - action_weight |g[a]|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCosts {
    pub target: f64,
    pub state_weight: f64,
    pub action_weight: f64,
}

impl Default for ChainCosts {
    fn default() -> Self {
        ChainCosts {
            target: 0.0,
            state_weight: 1.0,
            action_weight: 0.1,
        }
    }
}

/// Action embeddings of a chain: left, stay, right.
pub const CHAIN_MOVES: [f64; 3] = [-1.0, 0.0, 1.0];

/// A 1-D chain on `e[s] = s` where each action moves one cell left, stays, or moves one cell
/// right; with probability `slip` the move fails and the state stays put. Moves are clamped at
/// the ends. The reward is Lipschitz in `(s, a)` with constant `max(state_weight, action_weight)`.
pub fn make_chain_mdp(n_states: usize, slip: f64, costs: ChainCosts, gamma: f64) -> Result<FiniteMdp> {
    if n_states < 2 {
        return Err(Error::config("chain.n_states", "a chain needs at least 2 states"));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::config("chain.slip", format!("{slip} not in [0, 1]")));
    }
    let n = n_states;
    let mut transitions = vec![0.0; n * 3 * n];
    let mut rewards = Vec::with_capacity(n * 3);
    for s in 0..n {
        for (a, mv) in CHAIN_MOVES.iter().enumerate() {
            let target = (s as i64 + *mv as i64).clamp(0, n as i64 - 1) as usize;
            let row = &mut transitions[(s * 3 + a) * n..][..n];
            row[s] += slip;
            row[target] += 1.0 - slip;
            rewards.push(-costs.state_weight * (s as f64 - costs.target).abs() - costs.action_weight * mv.abs());
        }
    }
    FiniteMdp::new(n, 3, transitions, rewards, gamma, None, Some(CHAIN_MOVES.to_vec()), None)
}

/// Smoothness constants of an embedded finite MDP, measured exactly by enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MdpConstants {
    pub l_p: f64,
    pub l_r: f64,
    pub l_t: f64,
}

/// Exact `(L_P, L_r, L_T)` over all pairs of state-action pairs, with the distance
/// `|e[s] - e[s']| + |g[a] - g[a']|` and 1-D Wasserstein on the state embedding. Pairs at zero
/// distance with different kernels or rewards make the constant infinite.
pub fn measure_constants(mdp: &FiniteMdp) -> MdpConstants {
    let e = mdp.state_embedding();
    let g = mdp.action_embedding();
    let pairs: Vec<(usize, usize)> = (0..mdp.n_states())
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .collect();
    let mut l_p: f64 = 0.0;
    let mut l_r: f64 = 0.0;
    for (i, &(s, a)) in pairs.iter().enumerate() {
        for &(s2, a2) in &pairs[i + 1..] {
            let d = (e[s] - e[s2]).abs() + (g[a] - g[a2]).abs();
            let w = wasserstein_1d(e, mdp.row(s, a), mdp.row(s2, a2)).expect("rows share the support");
            let dr = (mdp.reward(s, a) - mdp.reward(s2, a2)).abs();
            l_p = l_p.max(ratio(w, d));
            l_r = l_r.max(ratio(dr, d));
        }
    }
    let mut l_t: f64 = 0.0;
    for &(s, a) in &pairs {
        l_t = l_t.max(wasserstein_to_dirac(e, mdp.row(s, a), e[s]));
    }
    MdpConstants { l_p, l_r, l_t }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 1e-15 {
        f64::INFINITY
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::rng_from_seed;
    use rand::seq::SliceRandom;

    #[test]
    fn time_lipschitz_constant_of_chains() {
        let costs = ChainCosts::default();
        assert_eq!(measure_constants(&make_chain_mdp(5, 0.0, costs, 0.9).unwrap()).l_t, 1.0);
        assert_eq!(measure_constants(&make_chain_mdp(5, 1.0, costs, 0.9).unwrap()).l_t, 0.0);
        assert_eq!(measure_constants(&make_chain_mdp(3, 0.5, costs, 0.9).unwrap()).l_t, 0.5);
    }

    #[test]
    fn slip_zero_chain_is_deterministic() {
        let mdp = make_chain_mdp(4, 0.0, ChainCosts::default(), 0.9).unwrap();
        assert!(mdp.is_deterministic());
        assert_eq!(mdp.p(0, 0, 0), 1.0);
        assert_eq!(mdp.p(3, 2, 3), 1.0);
        assert_eq!(mdp.p(1, 2, 2), 1.0);
    }

    #[test]
    fn degenerate_constants() {
        let flat = FiniteMdp::new(3, 2, vec![1.0 / 3.0; 18], vec![0.7; 6], 0.9, None, None, None).unwrap();
        let c = measure_constants(&flat);
        assert_eq!(c.l_r, 0.0);
        assert!(c.l_p < 1e-15);
    }

    #[test]
    fn chain_reward_constant_is_the_larger_weight() {
        let costs = ChainCosts {
            target: 2.0,
            state_weight: 0.5,
            action_weight: 0.3,
        };
        let c = measure_constants(&make_chain_mdp(5, 0.2, costs, 0.9).unwrap());
        assert!((c.l_r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constants_invariant_under_relabeling() {
        let mdp = make_chain_mdp(5, 0.3, ChainCosts::default(), 0.9).unwrap();
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng_from_seed(4));
        // New label perm[s] carries old state s, with its embedding.
        let mut inv = vec![0; 5];
        for (s, &k) in perm.iter().enumerate() {
            inv[k] = s;
        }
        let mut p = Vec::new();
        let mut r = Vec::new();
        for k in 0..5 {
            for a in 0..3 {
                for k2 in 0..5 {
                    p.push(mdp.p(inv[k], a, inv[k2]));
                }
                r.push(mdp.reward(inv[k], a));
            }
        }
        let emb: Vec<f64> = (0..5).map(|k| inv[k] as f64).collect();
        let relabeled =
            FiniteMdp::new(5, 3, p, r, 0.9, Some(emb), Some(CHAIN_MOVES.to_vec()), None).unwrap();
        let (a, b) = (measure_constants(&mdp), measure_constants(&relabeled));
        assert!((a.l_p - b.l_p).abs() < 1e-12);
        assert!((a.l_r - b.l_r).abs() < 1e-12);
        assert!((a.l_t - b.l_t).abs() < 1e-12);
    }
}
