//! Per-epoch run records, the rows of every convergence CSV.

use serde::{Deserialize, Serialize};

/// One epoch of one run.
///
/// `evals_cumulative` counts optimizer steps for gradient runs and objective
/// evaluations for metaheuristic runs. `wall_ms` is informative only and
/// excluded from determinism guarantees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u32,
    pub seed: u64,
    pub solver: String,
    pub schedule: String,
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub evals_cumulative: u64,
    pub wall_ms: u64,
}

impl RunRecord {
    /// True when the metric fields are all finite and counters are sane.
    pub fn is_well_formed(&self) -> bool {
        self.train_loss.is_finite()
            && self.train_acc.is_finite()
            && self.test_loss.is_finite()
            && self.test_acc.is_finite()
            && (0.0..=1.0).contains(&self.train_acc)
            && (0.0..=1.0).contains(&self.test_acc)
    }
}
