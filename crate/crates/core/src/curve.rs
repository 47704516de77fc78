//! Learning-curve records shared by DIDA and the tabular baselines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// Cumulative environment steps used for learning (evaluation excluded).
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Final training loss for DIDA; mean absolute TD error for the tabular learners.
    pub train_loss: f64,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
}

/// Mean and standard deviation of undiscounted episode returns.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub episode_returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(episode_returns: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&episode_returns);
        EvalStats {
            mean,
            std,
            episode_returns,
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<CurveRow>, _>>()?;
    Ok(rows)
}
