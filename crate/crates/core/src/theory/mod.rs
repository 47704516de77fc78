//! Exact and Monte Carlo checks of performance bounds for delayed policies.

pub mod augmented;
pub mod bounds;
pub mod fixtures;
pub mod report;
pub mod walk;
pub mod wasserstein;

pub use augmented::{build_augmented_mdp, AugmentedMdp, DEFAULT_AUGMENTED_CAP};
pub use bounds::{
    check_belief_props, check_bound_cor3, check_bound_thm2, cor3_bound, lipschitz_report, perf_diff_all,
    perf_diff_check, policy_lipschitz, q_action_lipschitz, sigma_b, sigma_b_all, sigma_b_rho, LipschitzReport,
    PerfDiff,
};
pub use fixtures::{appendix_a_suite, cor3_suite, fractional_suite, lemma1_suite, thm2_suite};
pub use report::{CheckRecord, Report};
pub use walk::{cor4_bound, cor4_suite, thm5_lower_bound, thm5_suite, walk_policy_gap, WalkGap, WalkPolicy};
pub use wasserstein::wasserstein_1d;
