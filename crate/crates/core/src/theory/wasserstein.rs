use crate::error::{Error, Result};

/// Exact 1-Wasserstein distance between two distributions on the same embedded support:
/// the integral of `|F_p - F_q|` over the sorted support points.
pub fn wasserstein_1d(support: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != support.len() || q.len() != support.len() {
        return Err(Error::Usage(format!(
            "distributions of length {} and {} on a support of {} points",
            p.len(),
            q.len(),
            support.len()
        )));
    }
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by(|&i, &j| support[i].total_cmp(&support[j]));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in order.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        cdf_gap += p[i] - q[i];
        total += cdf_gap.abs() * (support[j] - support[i]);
    }
    Ok(total)
}

/// W1 between two weighted point clouds on the real line (supports may differ).
pub fn wasserstein_1d_points(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> Result<f64> {
    if xs.len() != wx.len() || ys.len() != wy.len() {
        return Err(Error::Usage("points and weights differ in length".into()));
    }
    let support: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mut p = wx.to_vec();
    p.resize(support.len(), 0.0);
    let mut q = vec![0.0; xs.len()];
    q.extend_from_slice(wy);
    wasserstein_1d(&support, &p, &q)
}

/// W1 between a distribution on `support` and the Dirac at `point`: `sum_i p_i |x_i - point|`.
pub fn wasserstein_to_dirac(support: &[f64], p: &[f64], point: f64) -> f64 {
    support.iter().zip(p).map(|(x, w)| w * (x - point).abs()).sum()
}

/// Mean of a distribution on an embedded support.
pub fn mean(support: &[f64], p: &[f64]) -> f64 {
    support.iter().zip(p).map(|(x, w)| x * w).sum()
}

/// Variance of a distribution on an embedded support.
pub fn variance(support: &[f64], p: &[f64]) -> f64 {
    let m = mean(support, p);
    support.iter().zip(p).map(|(x, w)| w * (x - m).powi(2)).sum::<f64>().max(0.0)
}

/// `E|X - X'|` for `X, X'` drawn independently from `p`.
pub fn mean_pair_distance(support: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (x, wx) in support.iter().zip(p) {
        if *wx == 0.0 {
            continue;
        }
        for (y, wy) in support.iter().zip(p) {
            total += wx * wy * (x - y).abs();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn examples() {
        let support = [0.0, 2.5];
        assert_eq!(wasserstein_1d(&support, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.5);
        assert_eq!(wasserstein_1d(&support, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let w = wasserstein_1d(&[0.0, 1.0], &[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        assert!(matches!(
            wasserstein_1d(&[0.0, 1.0], &[1.0], &[0.0, 1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn unsorted_support_and_dirac_shortcut() {
        let support = [3.0, -1.0, 0.5];
        let p = [0.2, 0.5, 0.3];
        let dirac = [0.0, 0.0, 1.0];
        let w = wasserstein_1d(&support, &p, &dirac).unwrap();
        assert!((w - wasserstein_to_dirac(&support, &p, 0.5)).abs() < 1e-14);
    }

    /// Sorted-quantile coupling on equal-size uniform samples: W1 is the mean gap.
    #[test]
    fn matches_quantile_coupling_for_empirical_samples() {
        let mut rng = rng_from_seed(0);
        for _ in 0..50 {
            let n = 7;
            let mut xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0).collect();
            let mut ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
            let w = vec![1.0 / n as f64; n];
            let got = wasserstein_1d_points(&xs, &w, &ys, &w).unwrap();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            let oracle: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_distance_of_two_point_uniform() {
        assert!((mean_pair_distance(&[0.0, 1.0], &[0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert!((variance(&[0.0, 1.0], &[0.5, 0.5]) - 0.25).abs() < 1e-15);
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let t: f64 = v.iter().sum();
            v.iter().map(|x| x / t).collect()
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(
            support in proptest::collection::vec(-5.0f64..5.0, 5),
            p in dist(5), q in dist(5), r in dist(5),
        ) {
            let pq = wasserstein_1d(&support, &p, &q).unwrap();
            let qp = wasserstein_1d(&support, &q, &p).unwrap();
            let pr = wasserstein_1d(&support, &p, &r).unwrap();
            let rq = wasserstein_1d(&support, &r, &q).unwrap();
            prop_assert!((pq - qp).abs() < 1e-12);
            prop_assert!(pq <= pr + rq + 1e-12);
            prop_assert!(pq >= 0.0);
            // Kantorovich duality with the identity test function.
            prop_assert!((mean(&support, &p) - mean(&support, &q)).abs() <= pq + 1e-12);
        }
    }
}
