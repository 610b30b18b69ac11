//! BPR training: loss, analytic gradients through the whole graph pipeline,
//! Adam updates and the early-stopped fit loop.

mod adam;
mod fit;
mod gradients;
mod init;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, OptimizerState};
pub use fit::{fit, fit_with, EarlyStopping, EpochLog, FitResult, Trainer, MONITOR_K};
pub use gradients::{batch_objective, compute_gradients, BatchGradients, Triple};
pub use init::{xavier_bound, xavier_init};
pub use loss::{bpr_loss, l2_penalty, sigmoid, softplus};

use crate::error::{LatticeError, Result};

/// When the learned item graphs are rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphRefresh {
    /// Rebuilt and differentiated on every batch.
    PerBatch,
    /// Rebuilt on the first batch of each epoch, then held constant.
    PerEpoch,
}

impl std::str::FromStr for GraphRefresh {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_batch" => Ok(GraphRefresh::PerBatch),
            "per_epoch" => Ok(GraphRefresh::PerEpoch),
            _ => Err(LatticeError::InvalidArgument(format!(
                "graph_refresh must be `per_batch` or `per_epoch`, got `{}`",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation Recall@20 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub graph_refresh: GraphRefresh,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            l2_coeff: 1e-4,
            batch_size: 1024,
            max_epochs: 1000,
            patience: 10,
            seed: 42,
            graph_refresh: GraphRefresh::PerBatch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LatticeError::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(LatticeError::InvalidArgument(format!(
                "l2_coeff must be non-negative, got {}",
                self.l2_coeff
            )));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(LatticeError::InvalidArgument(
                "batch_size and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
