//! Minibatch gradient training loop.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::{BatchMasks, CompiledNet, Evaluator};
use crate::grad::backward_compiled;
use crate::net::NetworkSpec;
use crate::optim::{OptimizerKind, OptimizerState};
use crate::params::{glorot_init, roles, ParameterVector};
use crate::records::RunRecord;
use crate::rng;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1".to_string()));
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return Err(Error::config(format!(
                "batch size {} outside [1, {train_size}]",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Trains with seeded Glorot init and a seeded per-epoch shuffle; the final
/// short minibatch is used. Train/test metrics are measured after every
/// epoch in eval mode (dropout off). Deterministic for a given config.
pub fn train_gradient(
    net: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(ParameterVector, Vec<RunRecord>)> {
    train_gradient_inner(net, train, test, cfg, 1)
}

/// [`train_gradient`] measuring metrics only every `metrics_every` epochs
/// (the final epoch is always measured). Fitness-evaluation loops use this
/// to skip intermediate measurement passes; the optimization trajectory is
/// identical.
pub(crate) fn train_gradient_inner(
    net: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainingConfig,
    metrics_every: usize,
) -> Result<(ParameterVector, Vec<RunRecord>)> {
    cfg.validate(train.len())?;
    let compiled = CompiledNet::compile(net)?;
    if train.example_len() != compiled.in_features {
        return Err(Error::shape(format!(
            "training data features {} do not match network input {}",
            train.example_len(),
            compiled.in_features
        )));
    }
    let mut params = glorot_init(net, rng::derive(cfg.seed, roles::GLOROT))?;
    let mut opt = OptimizerState::new(cfg.optimizer, params.values.len());
    let mut shuffle_rng = rng::rng_for(cfg.seed, roles::SHUFFLE);
    let mut dropout_rng = rng::rng_for(cfg.seed, roles::DROPOUT);

    let train_eval = Evaluator::new(net, train)?;
    let test_eval = Evaluator::new(net, test)?;

    let m = train.len();
    let feat = train.example_len();
    let inputs =
        ArrayView2::from_shape((m, feat), train.inputs.data()).expect("contiguous dataset");
    let mut order: Vec<usize> = (0..m).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    let mut steps = 0u64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut batch = Array2::zeros((b, feat));
            let mut labels = Vec::with_capacity(b);
            for (row, &i) in chunk.iter().enumerate() {
                batch.row_mut(row).assign(&inputs.row(i));
                labels.push(train.labels[i]);
            }
            let masks = BatchMasks::draw(&compiled, b, &mut dropout_rng);
            let (loss, grad) =
                backward_compiled(&compiled, &params.values, batch, &labels, &masks);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} step {steps}"
                )));
            }
            opt.apply(&mut params.values, &grad, cfg.learning_rate)?;
            steps += 1;
        }
        if epoch != cfg.epochs && epoch % metrics_every != 0 {
            continue;
        }
        let (train_loss, train_acc) = train_eval.loss_and_acc(&params.values);
        let (test_loss, test_acc) = test_eval.loss_and_acc(&params.values);
        if !(train_loss.is_finite() && test_loss.is_finite()) {
            return Err(Error::Training(format!("non-finite metrics at epoch {epoch}")));
        }
        records.push(RunRecord {
            run_id: 0,
            seed: cfg.seed,
            solver: cfg.optimizer.name().to_string(),
            schedule: "-".to_string(),
            epoch: epoch as u32,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            evals_cumulative: steps,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok((params, records))
}
