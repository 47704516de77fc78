//! Random fixtures and the exact check suites built on them.

use rand::Rng;

use super::bounds::{check_belief_props, check_bound_cor3, check_bound_thm2, perf_diff_all, EXACT_TOL};
use super::augmented::{build_augmented_mdp, DEFAULT_AUGMENTED_CAP};
use super::report::{CheckRecord, Report};
use super::wasserstein::{mean, wasserstein_1d};
use crate::delay::{check_fractional_composition, CompositionReport, SubstepKernels};
use crate::envs::{make_chain_mdp, ChainCosts};
use crate::error::Result;
use crate::experts::value_iteration_expert;
use crate::mdp::{derive_seed, rng_from_seed, FiniteMdp, SimRng, TabularPolicy};

/// Largest state, action and delay sizes drawn by [`lemma1_suite`].
pub const MAX_RANDOM_STATES: usize = 5;
pub const MAX_RANDOM_ACTIONS: usize = 3;
pub const MAX_RANDOM_DELAY: usize = 3;

fn random_distribution(rng: &mut SimRng, n: usize) -> Vec<f64> {
    // Exponential weights give a flat Dirichlet; an occasional zero keeps sparse rows covered.
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        w[rng.random_range(0..n)] = 1.0;
        return w;
    }
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Random MDP with rewards in `[-1, 1]` and default embeddings.
pub fn random_finite_mdp(rng: &mut SimRng, n_states: usize, n_actions: usize, gamma: f64) -> FiniteMdp {
    let transitions = (0..n_states * n_actions)
        .flat_map(|_| random_distribution(rng, n_states))
        .collect();
    let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    FiniteMdp::new(n_states, n_actions, transitions, rewards, gamma, None, None, None)
        .expect("random rows are distributions")
}

pub fn random_policy(rng: &mut SimRng, n_states: usize, n_actions: usize) -> TabularPolicy {
    let probs = (0..n_states).flat_map(|_| random_distribution(rng, n_actions)).collect();
    TabularPolicy::new(n_states, n_actions, probs).expect("random rows are distributions")
}

/// The delayed performance-difference identity on `n_fixtures` random MDPs with random expert and
/// random delayed policy, at every augmented state.
pub fn lemma1_suite(n_fixtures: usize, seed: u64) -> Result<Report> {
    let mut report = Report::new("lemma1");
    for i in 0..n_fixtures {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let ns = rng.random_range(2..=MAX_RANDOM_STATES);
        let na = rng.random_range(2..=MAX_RANDOM_ACTIONS);
        let delay = rng.random_range(0..=MAX_RANDOM_DELAY);
        let mdp = random_finite_mdp(&mut rng, ns, na, 0.9);
        let expert = random_policy(&mut rng, ns, na);
        let aug = build_augmented_mdp(&mdp, delay, DEFAULT_AUGMENTED_CAP)?;
        let delayed = random_policy(&mut rng, aug.n_states(), na);
        let id = format!("random{i}:S{ns}A{na}D{delay}");
        for (x, pd) in perf_diff_all(&aug, &expert, &delayed)?.iter().enumerate() {
            report.push(CheckRecord::equal("lemma1", format!("{id}/x{x}"), pd.lhs, pd.rhs, 1e-6));
        }
    }
    Ok(report)
}

/// A chain fixture for the bound suites: size, slip, delay and expert.
#[derive(Clone, Debug)]
pub struct ChainFixture {
    pub name: String,
    pub mdp: FiniteMdp,
    pub expert: TabularPolicy,
    pub delay: usize,
}

/// `n` chains over sizes 3..=6, slips in `[0, 1]` and delays 1..=3. Experts alternate between the
/// value-iteration optimum and a random stochastic policy.
pub fn chain_fixtures(n: usize, seed: u64) -> Result<Vec<ChainFixture>> {
    (0..n)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let size = rng.random_range(3..=6);
            // Hit the slip endpoints on purpose: 0 is deterministic, 1 is frozen.
            let slip = match i % 5 {
                0 => 0.0,
                1 => 1.0,
                _ => (rng.random::<f64>() * 100.0).round() / 100.0,
            };
            let delay = rng.random_range(1..=3).min(if size > 5 { 2 } else { 3 });
            let mdp = make_chain_mdp(size, slip, ChainCosts::default(), 0.9)?;
            let expert = if i % 2 == 0 {
                value_iteration_expert(&mdp, 1e-10)?.policy
            } else {
                random_policy(&mut rng, size, 3)
            };
            Ok(ChainFixture {
                name: format!("chain{i}:n{size}slip{slip}D{delay}"),
                mdp,
                expert,
                delay,
            })
        })
        .collect()
}

pub fn thm2_suite(n_fixtures: usize, seed: u64) -> Result<Report> {
    let mut report = Report::new("thm2");
    for f in chain_fixtures(n_fixtures, seed)? {
        report.extend(check_bound_thm2(&f.mdp, &f.expert, f.delay, &f.name)?);
    }
    Ok(report)
}

pub fn cor3_suite(n_fixtures: usize, seed: u64) -> Result<Report> {
    let mut report = Report::new("cor3");
    for f in chain_fixtures(n_fixtures, seed)? {
        report.extend(check_bound_cor3(&f.mdp, &f.expert, f.delay, &f.name)?);
    }
    Ok(report)
}

/// `|E X - E Y| <= W1(X, Y)` on random pairs, then the belief inequalities on chain fixtures.
pub fn appendix_a_suite(n_fixtures: usize, seed: u64) -> Result<Report> {
    let mut report = Report::new("appendixA");
    let mut rng = rng_from_seed(derive_seed(seed, u64::MAX));
    for i in 0..n_fixtures {
        let n = rng.random_range(2..=8);
        let mut support: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        support.sort_by(f64::total_cmp);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        report.push(CheckRecord::at_most(
            "mean_w1",
            format!("pair{i}"),
            (mean(&support, &p) - mean(&support, &q)).abs(),
            wasserstein_1d(&support, &p, &q)?,
            EXACT_TOL,
        ));
    }
    for f in chain_fixtures(n_fixtures, seed)? {
        report.extend(check_belief_props(&f.mdp, &f.expert, f.delay, &f.name)?);
    }
    Ok(report)
}

/// Random substep kernels `K` with the one-step MDP `P = K K`, so the split is exact by design.
pub fn square_root_fixture(rng: &mut SimRng, n_states: usize, n_actions: usize) -> Result<(FiniteMdp, SubstepKernels)> {
    let k: Vec<f64> = (0..n_states * n_actions)
        .flat_map(|_| random_distribution(rng, n_states))
        .collect();
    let kernels = SubstepKernels::new(n_states, n_actions, 0.5, k.clone(), k)?;
    let mdp = FiniteMdp::new(n_states, n_actions, kernels.compose(), vec![0.0; n_states * n_actions], 0.9, None, None, None)?;
    Ok((mdp, kernels))
}

fn push_composition(report: &mut Report, id: &str, c: &CompositionReport) {
    report.push(CheckRecord::equal("fractional_exact", id, c.exact_max_deviation, 0.0, 1e-12));
    report.push(CheckRecord::at_most(
        "fractional_empirical",
        id,
        c.empirical_max_deviation,
        c.confidence_bound,
        0.0,
    ));
}

/// Composition of substep kernels into the unit-step kernel, exactly and by sampling, on random
/// square-root kernels and on the trivial split of random MDPs.
pub fn fractional_suite(n_fixtures: usize, samples: usize, seed: u64) -> Result<Report> {
    let mut report = Report::new("fractional");
    for i in 0..n_fixtures {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let n = rng.random_range(2..=5);
        let m = rng.random_range(1..=3);
        let (mdp, kernels) = square_root_fixture(&mut rng, n, m)?;
        let c = check_fractional_composition(&mdp, &kernels, samples, 0.01, derive_seed(seed, 1000 + i as u64))?;
        push_composition(&mut report, &format!("sqrt{i}:S{n}A{m}"), &c);
        let mdp = random_finite_mdp(&mut rng, n, m, 0.9);
        let kernels = SubstepKernels::trivial_split(&mdp);
        let c = check_fractional_composition(&mdp, &kernels, samples, 0.01, derive_seed(seed, 2000 + i as u64))?;
        push_composition(&mut report, &format!("trivial{i}:S{n}A{m}"), &c);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_fixtures_are_valid_and_reproducible() {
        let a = random_finite_mdp(&mut rng_from_seed(1), 3, 2, 0.9);
        let b = random_finite_mdp(&mut rng_from_seed(1), 3, 2, 0.9);
        assert_eq!(a, b);
        let p = random_policy(&mut rng_from_seed(2), 4, 3);
        for s in 0..4 {
            assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_suites_pass() {
        assert!(lemma1_suite(10, 0).unwrap().pass());
        assert!(thm2_suite(6, 0).unwrap().pass());
        assert!(cor3_suite(6, 0).unwrap().pass());
        assert!(appendix_a_suite(6, 0).unwrap().pass());
        assert!(fractional_suite(3, 5000, 0).unwrap().pass());
    }

    #[test]
    fn mismatched_split_fails_fractional_check() {
        let mut rng = rng_from_seed(8);
        let (mdp, _) = square_root_fixture(&mut rng, 3, 2).unwrap();
        let (_, other) = square_root_fixture(&mut rng, 3, 2).unwrap();
        let c = check_fractional_composition(&mdp, &other, 5000, 0.01, 0).unwrap();
        let mut report = Report::new("fractional");
        push_composition(&mut report, "mismatch", &c);
        assert!(!report.pass());
    }

    #[test]
    fn point_masses_attain_mean_bound() {
        let support = [0.0, 1.5, 4.0];
        let (p, q) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let w = wasserstein_1d(&support, &p, &q).unwrap();
        assert_eq!(w, (mean(&support, &p) - mean(&support, &q)).abs());
    }

    #[test]
    fn deterministic_chain_belief_quantities_vanish() {
        let mdp = make_chain_mdp(4, 0.0, ChainCosts::default(), 0.9).unwrap();
        let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
        let report = check_belief_props(&mdp, &expert, 2, "det").unwrap();
        assert!(report.pass());
        // Beliefs are Dirac: no spread. The displacement from the observed state is still up to
        // one cell per pending action.
        for check in ["pair_distance_euclid", "sigma_b_tlc"] {
            assert!(report.of(check).all(|r| r.lhs.abs() < 1e-12), "{check}");
        }
        assert!(report.of("pair_distance_euclid").all(|r| r.rhs.abs() < 1e-6));
    }

    #[test]
    fn slip_chain_belief_stays_within_delay_times_l_t() {
        let mdp = make_chain_mdp(5, 0.3, ChainCosts::default(), 0.9).unwrap();
        let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
        let report = check_belief_props(&mdp, &expert, 3, "slip").unwrap();
        assert!(report.pass());
        assert!(report.of("belief_w1_tlc").all(|r| (r.rhs - 3.0 * 0.7).abs() < 1e-12));
    }

    #[test]
    fn thm2_slack_shrinks_as_slip_vanishes() {
        let worst = |slip: f64| {
            let mdp = make_chain_mdp(5, slip, ChainCosts::default(), 0.9).unwrap();
            let expert = value_iteration_expert(&mdp, 1e-10).unwrap().policy;
            let r = check_bound_thm2(&mdp, &expert, 2, "sweep").unwrap();
            assert!(r.pass());
            r.records.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
        };
        let slacks: Vec<f64> = [0.4, 0.2, 0.1, 0.0].iter().map(|s| worst(*s)).collect();
        assert!(slacks.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{slacks:?}");
        assert!(slacks[3].abs() < 1e-12);
    }

    #[test]
    fn chain_fixtures_cover_slip_endpoints() {
        let f = chain_fixtures(5, 3).unwrap();
        assert!(f[0].name.contains("slip0D"));
        assert!(f[1].name.contains("slip1D"));
        assert!(f.iter().all(|c| (1..=3).contains(&c.delay)));
    }
}
