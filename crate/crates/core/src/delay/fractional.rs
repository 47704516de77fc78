use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{rng_from_seed, FiniteMdp};

/// Finite kernels for the two parts of a split step: `first[s][a][z]` covers the first
/// `delta` of the step and `second[z][a][s']` the remaining `1 - delta`.
#[derive(Clone, Debug)]
pub struct SubstepKernels {
    pub n_states: usize,
    pub n_actions: usize,
    pub delta: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl SubstepKernels {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        delta: f64,
        first: Vec<f64>,
        second: Vec<f64>,
    ) -> Result<Self> {
        let size = n_states * n_actions * n_states;
        if first.len() != size || second.len() != size {
            return Err(Error::config("kernels", "substep kernel has the wrong size"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::config("kernels.delta", format!("{delta} not in [0, 1]")));
        }
        for row in first.chunks(n_states).chain(second.chunks(n_states)) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 * n_states as f64 {
                return Err(Error::config("kernels", "substep rows must be distributions"));
            }
        }
        Ok(SubstepKernels {
            n_states,
            n_actions,
            delta,
            first,
            second,
        })
    }

    /// Kernels for `delta = 0`: the first part is the identity and the second is the full step.
    pub fn trivial_split(mdp: &FiniteMdp) -> Self {
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let mut first = vec![0.0; n * m * n];
        let mut second = Vec::with_capacity(n * m * n);
        for s in 0..n {
            for a in 0..m {
                first[(s * m + a) * n + s] = 1.0;
                second.extend_from_slice(mdp.row(s, a));
            }
        }
        SubstepKernels {
            n_states: n,
            n_actions: m,
            delta: 0.0,
            first,
            second,
        }
    }

    fn first_row(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.n_states;
        &self.first[k..k + self.n_states]
    }

    fn second_row(&self, z: usize, a: usize) -> &[f64] {
        let k = (z * self.n_actions + a) * self.n_states;
        &self.second[k..k + self.n_states]
    }

    /// Exact composition `sum_z second(s'|z,a) first(z|s,a)`, flattened like a transition tensor.
    pub fn compose(&self) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * self.n_actions * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let dst = &mut out[(s * self.n_actions + a) * n..][..n];
                for (z, w) in self.first_row(s, a).iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    for (o, p) in dst.iter_mut().zip(self.second_row(z, a)) {
                        *o += w * p;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositionReport {
    /// Largest `|composed - p|` over all cells, computed exactly.
    pub exact_max_deviation: f64,
    /// Largest `|empirical - p|` over all cells from sampled split steps.
    pub empirical_max_deviation: f64,
    /// Simultaneous Hoeffding confidence radius for the empirical deviations.
    pub confidence_bound: f64,
    pub samples_per_pair: usize,
    pub pass: bool,
}

/// Checks that running the two substep kernels back to back reproduces the one-step kernel of
/// `mdp`, both exactly and by sampling `n_samples` split steps per state-action pair.
pub fn check_fractional_composition(
    mdp: &FiniteMdp,
    kernels: &SubstepKernels,
    n_samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<CompositionReport> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    if kernels.n_states != n || kernels.n_actions != m {
        return Err(Error::config("kernels", "kernel shape differs from the MDP"));
    }
    if n_samples == 0 {
        return Err(Error::Usage("composition check needs samples".into()));
    }
    let composed = kernels.compose();
    let mut exact_max_deviation: f64 = 0.0;
    let mut empirical_max_deviation: f64 = 0.0;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; n];
    for s in 0..n {
        for a in 0..m {
            let target = mdp.row(s, a);
            let row = &composed[(s * m + a) * n..][..n];
            for (c, p) in row.iter().zip(target) {
                exact_max_deviation = exact_max_deviation.max((c - p).abs());
            }
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..n_samples {
                let z = sample(kernels.first_row(s, a), &mut rng);
                let next = sample(kernels.second_row(z, a), &mut rng);
                counts[next] += 1;
            }
            for (c, p) in counts.iter().zip(target) {
                let freq = *c as f64 / n_samples as f64;
                empirical_max_deviation = empirical_max_deviation.max((freq - p).abs());
            }
        }
    }
    let cells = (n * m * n) as f64;
    let confidence_bound = ((2.0 * cells / alpha).ln() / (2.0 * n_samples as f64)).sqrt();
    Ok(CompositionReport {
        exact_max_deviation,
        empirical_max_deviation,
        confidence_bound,
        samples_per_pair: n_samples,
        pass: exact_max_deviation <= 1e-12 && empirical_max_deviation <= confidence_bound,
    })
}

fn sample<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    crate::mdp::sample_index(probs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::rng_from_seed;

    fn random_stochastic(n: usize, m: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::new();
        for _ in 0..n * m {
            let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let t: f64 = row.iter().sum();
            out.extend(row.iter().map(|x| x / t));
        }
        out
    }

    /// Builds kernels `K` and the one-step MDP `P = K K` so the split is exact by design.
    fn square_root_fixture(n: usize, m: usize, seed: u64) -> (FiniteMdp, SubstepKernels) {
        let k = random_stochastic(n, m, seed);
        let kernels = SubstepKernels::new(n, m, 0.5, k.clone(), k).unwrap();
        let p = kernels.compose();
        let mdp = FiniteMdp::new(n, m, p, vec![0.0; n * m], 0.9, None, None, None).unwrap();
        (mdp, kernels)
    }

    #[test]
    fn square_root_kernels_pass() {
        let (mdp, kernels) = square_root_fixture(4, 2, 1);
        let report = check_fractional_composition(&mdp, &kernels, 20_000, 0.01, 2).unwrap();
        assert!(report.exact_max_deviation < 1e-15);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn wrong_kernels_fail() {
        let (mdp, _) = square_root_fixture(4, 2, 1);
        let other = random_stochastic(4, 2, 99);
        let kernels = SubstepKernels::new(4, 2, 0.5, other.clone(), other).unwrap();
        let report = check_fractional_composition(&mdp, &kernels, 20_000, 0.01, 2).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn zero_fraction_is_exact() {
        let (mdp, _) = square_root_fixture(3, 2, 5);
        let kernels = SubstepKernels::trivial_split(&mdp);
        assert_eq!(kernels.compose(), {
            let mut p = Vec::new();
            for s in 0..3 {
                for a in 0..2 {
                    p.extend_from_slice(mdp.row(s, a));
                }
            }
            p
        });
        assert!(check_fractional_composition(&mdp, &kernels, 1000, 0.01, 0).unwrap().pass);
    }

    #[test]
    fn deterministic_split_has_zero_deviation() {
        // Two half-steps to the right on a cyclic chain equal one full step of two cells.
        let n = 5;
        let mut half = vec![0.0; n * n];
        let mut full = vec![0.0; n * n];
        for s in 0..n {
            half[s * n + (s + 1) % n] = 1.0;
            full[s * n + (s + 2) % n] = 1.0;
        }
        let kernels = SubstepKernels::new(n, 1, 0.5, half.clone(), half).unwrap();
        let mdp = FiniteMdp::new(n, 1, full, vec![0.0; n], 0.9, None, None, None).unwrap();
        let report = check_fractional_composition(&mdp, &kernels, 500, 0.01, 0).unwrap();
        assert_eq!(report.exact_max_deviation, 0.0);
        assert_eq!(report.empirical_max_deviation, 0.0);
    }
}
