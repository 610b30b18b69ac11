use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, compute_gradients, GraphRefresh, OptimizerState, TrainConfig, Triple};
use crate::data::{sample_negative, InteractionDataset, Partition, Split};
use crate::error::{LatticeError, Result};
use crate::eval::evaluate;
use crate::model::{ModelContext, ParameterSet};
use crate::sparse::SparseGraph;

/// Cutoff monitored for early stopping.
pub const MONITOR_K: usize = 20;

/// Tracks the best validation score seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a score and reports whether it strictly improves on the best.
    pub fn observe(&mut self, score: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => score > b,
        };
        if improved {
            self.best = Some(score);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_recall@20")]
    pub val_recall: f64,
    #[serde(rename = "val_ndcg@20")]
    pub val_ndcg: f64,
    pub alpha: Vec<f64>,
    /// Wall-clock time of the epoch, evaluation included.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the best validation epoch.
    pub params: ParameterSet,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
}

/// Parameters, optimizer state and the sampling stream of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    frozen: Option<Vec<SparseGraph>>,
}

impl Trainer {
    /// Seeds one generator from `config.seed`, draws the initial parameters
    /// from it, and keeps using it for negatives and shuffling.
    pub fn new(ctx: &ModelContext, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ctx.init_params(&mut rng)?;
        let optimizer = OptimizerState::new(&params, config.learning_rate);
        Ok(Trainer {
            params,
            optimizer,
            config,
            rng,
            frozen: None,
        })
    }

    /// One fresh negative per training pair, in shuffled order.
    pub fn epoch_triples(&mut self, train: &InteractionDataset) -> Result<Vec<Triple>> {
        let mut triples = Vec::with_capacity(train.num_pairs());
        for &(user, pos) in train.pairs() {
            let neg = sample_negative(user, train.positives(user), train.num_items(), &mut self.rng)?;
            triples.push(Triple { user, pos, neg });
        }
        triples.shuffle(&mut self.rng);
        Ok(triples)
    }

    /// Gradient step on one batch; returns the batch loss before the update.
    pub fn step(&mut self, ctx: &ModelContext, batch: &[Triple]) -> Result<f64> {
        let frozen = match self.config.graph_refresh {
            GraphRefresh::PerBatch => None,
            GraphRefresh::PerEpoch => self.frozen.as_deref(),
        };
        let out = compute_gradients(ctx, &self.params, batch, self.config.l2_coeff, frozen)?;
        if self.config.graph_refresh == GraphRefresh::PerEpoch
            && self.frozen.is_none()
            && !out.learned_graphs.is_empty()
        {
            self.frozen = Some(out.learned_graphs);
        }
        adam_step(&mut self.optimizer, &mut self.params, &out.grads)?;
        Ok(out.loss)
    }

    /// One pass over the training pairs; returns the mean triple loss.
    pub fn run_epoch(&mut self, ctx: &ModelContext, train: &InteractionDataset, epoch: usize) -> Result<f64> {
        self.frozen = None;
        let triples = self.epoch_triples(train)?;
        let mut total = 0.0;
        for (step, batch) in triples.chunks(self.config.batch_size).enumerate() {
            let loss = self.step(ctx, batch)?;
            if !loss.is_finite() {
                return Err(LatticeError::NonFiniteLoss { epoch, step });
            }
            total += loss * batch.len() as f64;
        }
        Ok(total / triples.len().max(1) as f64)
    }
}

/// Trains until validation Recall@20 stops improving and returns the best
/// parameters.
pub fn fit(ctx: &ModelContext, split: &Split, config: &TrainConfig) -> Result<FitResult> {
    fit_with(ctx, split, config, |_| Ok(()))
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with<F>(ctx: &ModelContext, split: &Split, config: &TrainConfig, mut on_epoch: F) -> Result<FitResult>
where
    F: FnMut(&EpochLog) -> Result<()>,
{
    let mut trainer = Trainer::new(ctx, config.clone())?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = trainer.params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let train_loss = trainer.run_epoch(ctx, &split.train, epoch)?;
        let report = evaluate(ctx, &trainer.params, split, Partition::Valid, &[MONITOR_K])?;
        let m = &report.metrics[0];
        let seconds = start.elapsed().as_secs_f64();
        let log_entry = EpochLog {
            epoch,
            train_loss,
            val_recall: m.recall,
            val_ndcg: m.ndcg,
            alpha: trainer.params.mixer.weights(),
            seconds,
        };
        log::info!(
            "epoch {} loss {:.5} val recall@20 {:.5} ndcg@20 {:.5} ({:.1}s)",
            epoch,
            train_loss,
            m.recall,
            m.ndcg,
            seconds
        );
        on_epoch(&log_entry)?;
        if stopper.observe(m.recall) {
            best_params = trainer.params.clone();
            best_epoch = epoch;
        }
        history.push(log_entry);
        if stopper.should_stop() {
            break;
        }
    }
    Ok(FitResult {
        params: best_params,
        history,
        best_epoch,
        best_val_recall: stopper.best.unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_patience_without_strict_gain() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(0.1));
        assert!(!s.observe(0.1));
        assert!(!s.should_stop());
        assert!(!s.observe(0.05));
        assert!(s.should_stop());
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = EarlyStopping::new(2);
        s.observe(0.1);
        s.observe(0.0);
        assert!(s.observe(0.2));
        assert_eq!(s.since_best, 0);
        assert_eq!(s.best, Some(0.2));
    }
}
