use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixing weight of the expert during data collection at iteration `i` (1-based).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BetaSchedule {
    /// `beta_1 = 1` and `beta_i = 0` afterwards.
    #[default]
    FirstOnly,
    /// The same weight at every iteration.
    Constant { beta: f64 },
    /// `beta_i = decay^(i - 1)`.
    Geometric { decay: f64 },
    /// Explicit weights; the last entry repeats.
    Table { betas: Vec<f64> },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..=1.0).contains(&b);
        let valid = match self {
            BetaSchedule::FirstOnly => true,
            BetaSchedule::Constant { beta } => ok(*beta),
            BetaSchedule::Geometric { decay } => ok(*decay),
            BetaSchedule::Table { betas } => !betas.is_empty() && betas.iter().all(|b| ok(*b)),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::config("dida.beta", format!("{self:?} has weights outside [0, 1]")))
        }
    }
}

pub fn beta_weight(schedule: &BetaSchedule, i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::Usage("iterations are numbered from 1".into()));
    }
    schedule.validate()?;
    Ok(match schedule {
        BetaSchedule::FirstOnly => {
            if i == 1 {
                1.0
            } else {
                0.0
            }
        }
        BetaSchedule::Constant { beta } => *beta,
        BetaSchedule::Geometric { decay } => decay.powi((i - 1) as i32),
        BetaSchedule::Table { betas } => betas[(i - 1).min(betas.len() - 1)],
    })
}

#[derive(Clone, Debug, Default)]
struct Bucket {
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

/// Aggregated (encoded augmented state, expert label) pairs, one bucket per iteration, keeping
/// at most `retention` buckets.
#[derive(Clone, Debug)]
pub struct ImitationDataset {
    input_dim: usize,
    target_dim: usize,
    retention: usize,
    buckets: VecDeque<Bucket>,
}

impl ImitationDataset {
    pub fn new(input_dim: usize, target_dim: usize, retention: usize) -> Result<Self> {
        if retention == 0 {
            return Err(Error::config("dida.retention", "must keep at least one iteration"));
        }
        Ok(ImitationDataset {
            input_dim,
            target_dim,
            retention,
            buckets: VecDeque::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn retention(&self) -> usize {
        self.retention
    }

    /// Opens a bucket for a new iteration, evicting the oldest when full.
    pub fn begin_iteration(&mut self) {
        if self.buckets.len() == self.retention {
            self.buckets.pop_front();
        }
        self.buckets.push_back(Bucket::default());
    }

    pub fn push(&mut self, input: &[f32], target: &[f32]) -> Result<()> {
        if input.len() != self.input_dim || target.len() != self.target_dim {
            return Err(Error::config(
                "dataset",
                format!(
                    "sample of shape ({}, {}) in a dataset of shape ({}, {})",
                    input.len(),
                    target.len(),
                    self.input_dim,
                    self.target_dim
                ),
            ));
        }
        if self.buckets.is_empty() {
            self.begin_iteration();
        }
        let bucket = self.buckets.back_mut().expect("bucket just ensured");
        bucket.inputs.extend_from_slice(input);
        bucket.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(|b| b.targets.len() / self.target_dim.max(1)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// All retained samples, oldest first, as row-major input and target matrices.
    pub fn flatten(&self) -> (Vec<f32>, Vec<f32>) {
        let inputs = self.buckets.iter().flat_map(|b| b.inputs.iter().copied()).collect();
        let targets = self.buckets.iter().flat_map(|b| b.targets.iter().copied()).collect();
        (inputs, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule() {
        let s = BetaSchedule::default();
        assert_eq!(beta_weight(&s, 1).unwrap(), 1.0);
        assert_eq!(beta_weight(&s, 2).unwrap(), 0.0);
        assert_eq!(beta_weight(&s, 100).unwrap(), 0.0);
        assert!(beta_weight(&s, 0).is_err());
    }

    #[test]
    fn other_schedules() {
        assert_eq!(beta_weight(&BetaSchedule::Geometric { decay: 0.5 }, 3).unwrap(), 0.25);
        let table = BetaSchedule::Table { betas: vec![1.0, 0.3] };
        assert_eq!(beta_weight(&table, 7).unwrap(), 0.3);
        assert!(beta_weight(&BetaSchedule::Constant { beta: 1.5 }, 1).is_err());
    }

    #[test]
    fn rejects_misshapen_samples() {
        let mut d = ImitationDataset::new(2, 1, 3).unwrap();
        assert!(d.push(&[1.0], &[0.0]).is_err());
        d.push(&[1.0, 2.0], &[0.5]).unwrap();
        assert_eq!(d.flatten(), (vec![1.0, 2.0], vec![0.5]));
    }

    proptest! {
        #[test]
        fn retention_bounds_size(sizes in proptest::collection::vec(0usize..20, 1..15), k in 1usize..5) {
            let mut d = ImitationDataset::new(1, 1, k).unwrap();
            for (i, n) in sizes.iter().enumerate() {
                d.begin_iteration();
                for _ in 0..*n {
                    d.push(&[i as f32], &[0.0]).unwrap();
                }
                let max = sizes.iter().copied().max().unwrap();
                prop_assert!(d.len() <= k * max);
                prop_assert!(d.n_buckets() <= k);
                let kept: usize = sizes[..=i].iter().rev().take(k).sum();
                prop_assert_eq!(d.len(), kept);
            }
            // Oldest samples go first.
            let (inputs, _) = d.flatten();
            let oldest = sizes.len().saturating_sub(k);
            prop_assert!(inputs.iter().all(|x| *x as usize >= oldest));
        }
    }
}
