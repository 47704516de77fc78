use serde::{Deserialize, Serialize};

use super::augmented::{build_augmented_mdp, AugmentedMdp, DEFAULT_AUGMENTED_CAP};
use super::report::{CheckRecord, Report};
use super::wasserstein::{mean_pair_distance, variance, wasserstein_1d, wasserstein_to_dirac};
use crate::envs::measure_constants;
use crate::error::Result;
use crate::mdp::{discounted_occupancies, solve_q_exact, solve_v_exact, FiniteMdp, TabularPolicy};

/// Tolerance for exact (linear-algebra) bound checks.
pub const EXACT_TOL: f64 = 1e-9;

/// Smoothness constants of an MDP and an undelayed policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub l_p: f64,
    pub l_r: f64,
    pub l_t: f64,
    pub l_pi: f64,
    /// Action-Lipschitz constant of `Q^pi`, measured by enumeration.
    pub l_q: f64,
    /// `L_r / (1 - gamma L_P (1 + L_pi))`, when `gamma L_P (1 + L_pi) < 1`.
    pub l_q_formula: Option<f64>,
}

/// `max W1(pi(.|s), pi(.|s')) / |e[s] - e[s']|` with W1 on the action embedding.
pub fn policy_lipschitz(mdp: &FiniteMdp, policy: &TabularPolicy) -> f64 {
    let e = mdp.state_embedding();
    let g = mdp.action_embedding();
    let mut l: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for s2 in s + 1..mdp.n_states() {
            let w = wasserstein_1d(g, policy.row(s), policy.row(s2)).expect("rows share the action support");
            let d = (e[s] - e[s2]).abs();
            l = l.max(if d > 0.0 {
                w / d
            } else if w > 1e-15 {
                f64::INFINITY
            } else {
                0.0
            });
        }
    }
    l
}

/// `max_s max_{a != a'} |Q(s,a) - Q(s,a')| / |g[a] - g[a']|` for a row-major `Q`.
pub fn q_action_lipschitz(mdp: &FiniteMdp, q: &[f64]) -> f64 {
    let g = mdp.action_embedding();
    let na = mdp.n_actions();
    let mut l: f64 = 0.0;
    for row in q.chunks(na) {
        for a in 0..na {
            for a2 in a + 1..na {
                let d = (g[a] - g[a2]).abs();
                let dq = (row[a] - row[a2]).abs();
                l = l.max(if d > 0.0 {
                    dq / d
                } else if dq > 1e-15 {
                    f64::INFINITY
                } else {
                    0.0
                });
            }
        }
    }
    l
}

pub fn lipschitz_report(mdp: &FiniteMdp, expert: &TabularPolicy) -> Result<LipschitzReport> {
    let c = measure_constants(mdp);
    let l_pi = policy_lipschitz(mdp, expert);
    let q = solve_q_exact(mdp, expert)?;
    let denom = 1.0 - mdp.gamma() * c.l_p * (1.0 + l_pi);
    Ok(LipschitzReport {
        l_p: c.l_p,
        l_r: c.l_r,
        l_t: c.l_t,
        l_pi,
        l_q: q_action_lipschitz(mdp, &q),
        l_q_formula: (denom > 0.0).then(|| c.l_r / denom),
    })
}

/// Both sides of the delayed performance-difference identity at one augmented state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfDiff {
    /// `E_{s ~ b(.|x)} V^E(s) - V^~(x)`.
    pub lhs: f64,
    /// `1/(1-gamma) E_{x' ~ d_x} [E_b V^E - E_{b, pi~} Q^E]`.
    pub rhs: f64,
    pub residual: f64,
}

/// The identity at every augmented state. `delayed` is any policy on `X`.
pub fn perf_diff_all(aug: &AugmentedMdp, expert: &TabularPolicy, delayed: &TabularPolicy) -> Result<Vec<PerfDiff>> {
    let base = aug.base();
    let na = base.n_actions();
    let gamma = base.gamma();
    let v_e = solve_v_exact(base, expert)?;
    let q_e = solve_q_exact(base, expert)?;
    let v_delayed = solve_v_exact(aug.mdp(), delayed)?;
    let bv = aug.belief_average(&v_e);
    // Advantage-like gap at each x': E_b V^E - E_{b, pi~} Q^E.
    let gaps: Vec<f64> = (0..aug.n_states())
        .map(|x| {
            let b = aug.belief(x);
            let bq: f64 = (0..base.n_states())
                .map(|s| b[s] * (0..na).map(|a| delayed.prob(x, a) * q_e[s * na + a]).sum::<f64>())
                .sum();
            bv[x] - bq
        })
        .collect();
    let occupancies = discounted_occupancies(aug.mdp(), delayed)?;
    Ok((0..aug.n_states())
        .map(|x| {
            let lhs = bv[x] - v_delayed[x];
            let rhs = occupancies[x].iter().zip(&gaps).map(|(d, g)| d * g).sum::<f64>() / (1.0 - gamma);
            PerfDiff {
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
            }
        })
        .collect())
}

pub fn perf_diff_check(aug: &AugmentedMdp, expert: &TabularPolicy, delayed: &TabularPolicy, x: usize) -> Result<PerfDiff> {
    Ok(perf_diff_all(aug, expert, delayed)?[x])
}

/// `sigma_b^x = E_{x' ~ d_x, s, s' iid ~ b(.|x')} |e[s] - e[s']|` for every start `x`.
pub fn sigma_b_all(aug: &AugmentedMdp, delayed: &TabularPolicy) -> Result<Vec<f64>> {
    let e = aug.base().state_embedding();
    let spread: Vec<f64> = aug.beliefs().iter().map(|b| mean_pair_distance(e, b)).collect();
    let occupancies = discounted_occupancies(aug.mdp(), delayed)?;
    Ok(occupancies
        .iter()
        .map(|d| d.iter().zip(&spread).map(|(w, s)| w * s).sum())
        .collect())
}

pub fn sigma_b(aug: &AugmentedMdp, delayed: &TabularPolicy, x: usize) -> Result<f64> {
    Ok(sigma_b_all(aug, delayed)?[x])
}

/// `sigma_b` with the occupancy started from a distribution `rho` over `X`.
pub fn sigma_b_rho(aug: &AugmentedMdp, delayed: &TabularPolicy, rho: &[f64]) -> Result<f64> {
    Ok(sigma_b_all(aug, delayed)?.iter().zip(rho).map(|(s, r)| s * r).sum())
}

/// Per-start quantities shared by the bound checks.
struct BeliefPolicyGap {
    constants: LipschitzReport,
    lhs: Vec<f64>,
    sigma: Vec<f64>,
}

fn belief_policy_gap(mdp: &FiniteMdp, expert: &TabularPolicy, delay: usize) -> Result<BeliefPolicyGap> {
    let constants = lipschitz_report(mdp, expert)?;
    let aug = build_augmented_mdp(mdp, delay, DEFAULT_AUGMENTED_CAP)?;
    let pi = aug.belief_policy(expert)?;
    let v_e = solve_v_exact(mdp, expert)?;
    let v_delayed = solve_v_exact(aug.mdp(), &pi)?;
    let lhs = aug
        .belief_average(&v_e)
        .iter()
        .zip(&v_delayed)
        .map(|(a, b)| a - b)
        .collect();
    Ok(BeliefPolicyGap {
        constants,
        lhs,
        sigma: sigma_b_all(&aug, &pi)?,
    })
}

/// `E_b V^E - V^{pi_b}(x) <= L_Q L_pi sigma_b^x / (1 - gamma)` at every augmented state.
pub fn check_bound_thm2(mdp: &FiniteMdp, expert: &TabularPolicy, delay: usize, fixture: &str) -> Result<Report> {
    let gap = belief_policy_gap(mdp, expert, delay)?;
    let c = gap.constants;
    let scale = c.l_q * c.l_pi / (1.0 - mdp.gamma());
    let mut report = Report::new("thm2");
    for (x, (lhs, sigma)) in gap.lhs.iter().zip(&gap.sigma).enumerate() {
        report.push(CheckRecord::at_most(
            "thm2",
            format!("{fixture}/x{x}"),
            *lhs,
            scale * sigma,
            EXACT_TOL,
        ));
    }
    Ok(report)
}

/// `2 delay L_T L_Q L_pi / (1 - gamma)`.
pub fn cor3_bound(c: &LipschitzReport, delay: usize, gamma: f64) -> f64 {
    2.0 * delay as f64 * c.l_t * c.l_q * c.l_pi / (1.0 - gamma)
}

/// The time-Lipschitz form of the bound, plus `sigma_b^x <= 2 delay L_T`.
pub fn check_bound_cor3(mdp: &FiniteMdp, expert: &TabularPolicy, delay: usize, fixture: &str) -> Result<Report> {
    let gap = belief_policy_gap(mdp, expert, delay)?;
    let bound = cor3_bound(&gap.constants, delay, mdp.gamma());
    let sigma_cap = 2.0 * delay as f64 * gap.constants.l_t;
    let mut report = Report::new("cor3");
    for (x, (lhs, sigma)) in gap.lhs.iter().zip(&gap.sigma).enumerate() {
        report.push(CheckRecord::at_most("cor3", format!("{fixture}/x{x}"), *lhs, bound, EXACT_TOL));
        report.push(CheckRecord::at_most(
            "sigma_b_tlc",
            format!("{fixture}/x{x}"),
            *sigma,
            sigma_cap,
            EXACT_TOL,
        ));
    }
    Ok(report)
}

/// Belief-level inequalities at every augmented state: `W1(b, delta_{s1}) <= delay L_T`,
/// `E|s - s'| <= sqrt(2 Var_b)`, and the occupancy-averaged `sigma_b^x <= 2 delay L_T`.
pub fn check_belief_props(mdp: &FiniteMdp, expert: &TabularPolicy, delay: usize, fixture: &str) -> Result<Report> {
    let l_t = measure_constants(mdp).l_t;
    let e = mdp.state_embedding();
    let aug = build_augmented_mdp(mdp, delay, DEFAULT_AUGMENTED_CAP)?;
    let pi = aug.belief_policy(expert)?;
    let sigma = sigma_b_all(&aug, &pi)?;
    let mut report = Report::new("appendixA");
    for x in 0..aug.n_states() {
        let b = aug.belief(x);
        let s1 = aug.decode(x).0;
        let id = format!("{fixture}/x{x}");
        report.push(CheckRecord::at_most(
            "belief_w1_tlc",
            id.clone(),
            wasserstein_to_dirac(e, b, e[s1]),
            delay as f64 * l_t,
            EXACT_TOL,
        ));
        report.push(CheckRecord::at_most(
            "pair_distance_euclid",
            id.clone(),
            mean_pair_distance(e, b),
            (2.0 * variance(e, b)).sqrt(),
            EXACT_TOL,
        ));
        report.push(CheckRecord::at_most(
            "sigma_b_tlc",
            id,
            sigma[x],
            2.0 * delay as f64 * l_t,
            EXACT_TOL,
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_chain_mdp, ChainCosts};
    use crate::experts::value_iteration_expert;
    use crate::theory::fixtures::{random_finite_mdp, random_policy};
    use crate::mdp::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn deterministic_belief_policy_has_zero_gap() {
        let mdp = make_chain_mdp(5, 0.0, ChainCosts::default(), 0.9).unwrap();
        let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
        let aug = build_augmented_mdp(&mdp, 2, DEFAULT_AUGMENTED_CAP).unwrap();
        let pi = aug.belief_policy(&expert).unwrap();
        for pd in perf_diff_all(&aug, &expert, &pi).unwrap() {
            assert!(pd.lhs.abs() < 1e-9 && pd.rhs.abs() < 1e-9, "{pd:?}");
        }
        assert!(sigma_b_all(&aug, &pi).unwrap().iter().all(|s| *s == 0.0));
        let report = check_bound_thm2(&mdp, &expert, 2, "det").unwrap();
        assert!(report.pass());
    }

    #[test]
    fn zero_delay_reduces_to_classic_lemma() {
        let mut rng = rng_from_seed(4);
        let mdp = random_finite_mdp(&mut rng, 4, 3, 0.9);
        let expert = random_policy(&mut rng, 4, 3);
        let other = random_policy(&mut rng, 4, 3);
        let aug = build_augmented_mdp(&mdp, 0, DEFAULT_AUGMENTED_CAP).unwrap();
        let ve = solve_v_exact(&mdp, &expert).unwrap();
        let vo = solve_v_exact(&mdp, &other).unwrap();
        for (s, pd) in perf_diff_all(&aug, &expert, &other).unwrap().iter().enumerate() {
            assert!((pd.lhs - (ve[s] - vo[s])).abs() < 1e-12);
            assert!(pd.residual < 1e-9);
        }
    }

    #[test]
    fn sigma_b_of_uniform_two_point_belief() {
        // Every belief is uniform over states at distance 1, so sigma_b = 0.5 everywhere.
        let mdp = FiniteMdp::new(2, 2, vec![0.5; 8], vec![0.0; 4], 0.9, None, None, None).unwrap();
        let aug = build_augmented_mdp(&mdp, 1, DEFAULT_AUGMENTED_CAP).unwrap();
        let pi = TabularPolicy::uniform(aug.n_states(), 2);
        for s in sigma_b_all(&aug, &pi).unwrap() {
            assert!((s - 0.5).abs() < 1e-12);
        }
        let rho = vec![0.25; 4];
        assert!((sigma_b_rho(&aug, &pi, &rho).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frozen_chain_bound_is_zero() {
        let mdp = make_chain_mdp(4, 1.0, ChainCosts::default(), 0.9).unwrap();
        let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
        let c = lipschitz_report(&mdp, &expert).unwrap();
        assert_eq!(cor3_bound(&c, 2, 0.9), 0.0);
        let report = check_bound_cor3(&mdp, &expert, 2, "frozen").unwrap();
        assert!(report.pass());
        assert!(report.of("cor3").all(|r| r.lhs.abs() < 1e-12));
    }

    #[test]
    fn cor3_bound_formula_on_slip_half_chain() {
        let mdp = make_chain_mdp(5, 0.5, ChainCosts::default(), 0.9).unwrap();
        let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
        let c = lipschitz_report(&mdp, &expert).unwrap();
        assert_eq!(c.l_t, 0.5);
        let expected = 2.0 * 2.0 * 0.5 * c.l_q * c.l_pi / 0.1;
        assert!((cor3_bound(&c, 2, 0.9) - expected).abs() < 1e-12 * expected);
        for d in 1..=3 {
            assert!((cor3_bound(&c, d, 0.9) - d as f64 * cor3_bound(&c, 1, 0.9)).abs() < 1e-12);
        }
        assert!(check_bound_cor3(&mdp, &expert, 2, "slip0.5").unwrap().pass());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn perf_diff_is_an_identity(seed in 0u64..10_000, ns in 2usize..=4, na in 2usize..=3, delay in 0usize..=2) {
            let mut rng = rng_from_seed(seed);
            let mdp = random_finite_mdp(&mut rng, ns, na, 0.9);
            let expert = random_policy(&mut rng, ns, na);
            let aug = build_augmented_mdp(&mdp, delay, DEFAULT_AUGMENTED_CAP).unwrap();
            let delayed = random_policy(&mut rng, aug.n_states(), na);
            for pd in perf_diff_all(&aug, &expert, &delayed).unwrap() {
                prop_assert!(pd.residual <= 1e-9);
            }
        }

        #[test]
        fn thm2_holds_in_absolute_value(seed in 0u64..10_000, n in 3usize..=5, slip in 0.0f64..=1.0, delay in 1usize..=2) {
            let mdp = make_chain_mdp(n, slip, ChainCosts::default(), 0.9).unwrap();
            let mut rng = rng_from_seed(seed);
            let expert = random_policy(&mut rng, n, 3);
            let report = check_bound_thm2(&mdp, &expert, delay, "chain").unwrap();
            for r in &report.records {
                prop_assert!(r.lhs.abs() <= r.rhs + EXACT_TOL, "{:?}", r);
            }
        }

        #[test]
        fn measured_l_q_below_formula(n in 3usize..=6, slip in 0.0f64..=1.0, gamma in 0.0f64..0.95) {
            let mdp = make_chain_mdp(n, slip, ChainCosts::default(), gamma).unwrap();
            let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
            let c = lipschitz_report(&mdp, &expert).unwrap();
            if let Some(formula) = c.l_q_formula {
                prop_assert!(c.l_q <= formula + 1e-9, "{:?}", c);
            }
        }
    }
}
