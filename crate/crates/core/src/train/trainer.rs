use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, Dataset, EarlyStopping, MetricsReport, PlateauConfig, PlateauScheduler, StopDecision, TrainError};
use crate::data::NUM_CLASSES;
use crate::model::{EmoTech, ModelError};
use crate::nn::ForwardCtx;
use crate::tensor::{Graph, Real, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Upper bound; early stopping may end a run sooner.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    pub folds: usize,
    pub seed: u64,
    /// Ends a run as soon as an epoch's running train accuracy reaches this.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr0: 1e-3,
            lr_min: 1e-6,
            adam: AdamConfig::default(),
            early_stop_patience: 10,
            plateau_patience: 3,
            plateau_factor: 0.5,
            plateau_min_delta: 1e-4,
            folds: 5,
            seed: 0,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0 && self.lr0.is_finite()) {
            return bad("need 0 < lr_min <= lr0");
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must be in (0, 1)");
        }
        if self.folds < 2 {
            return bad("at least 2 folds");
        }
        Ok(())
    }

    fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            min_delta: self.plateau_min_delta,
            min_lr: self.lr_min,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: usize,
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// 1-based epoch whose weights the model now holds.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    pub reached_target: bool,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn one_hot<T: Real>(labels: &[usize]) -> Tensor<T> {
    Tensor::from_fn(&[labels.len(), NUM_CLASSES], |i| {
        if labels[i / NUM_CLASSES] == i % NUM_CLASSES {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Inference-mode probabilities for `idx`, batched and spread over the rayon pool.
pub fn predict_probs<T: Real>(
    model: &EmoTech<T>,
    data: &Dataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
    let chunks: Vec<Vec<[f64; NUM_CLASSES]>> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let (mfcc, tokens, _) = data.batch::<T>(chunk);
            let p = model.predict(&mfcc, &tokens)?;
            Ok(p.data()
                .chunks(NUM_CLASSES)
                .map(|r| std::array::from_fn(|k| r[k].as_f64()))
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(chunks.concat())
}

/// Mean cross-entropy and accuracy of `probs` against the labels of `idx`.
fn loss_and_accuracy(probs: &[[f64; NUM_CLASSES]], data: &Dataset, idx: &[usize]) -> (f64, f64) {
    let n = idx.len().max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &i) in probs.iter().zip(idx) {
        let y = data.labels[i];
        loss -= (p[y] + 1e-12).ln();
        correct += usize::from(argmax(p) == y);
    }
    (loss / n, correct as f64 / n)
}

/// Argmax predictions over `idx` and the resulting metrics.
pub fn evaluate<T: Real>(model: &EmoTech<T>, data: &Dataset, idx: &[usize]) -> Result<MetricsReport, ModelError> {
    let probs = predict_probs(model, data, idx, 32)?;
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truth: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    Ok(MetricsReport::from_predictions(&truth, &predicted))
}

/// Trains `model` in place on `train_idx`, monitoring `val_idx` (or the
/// training loss when `val_idx` is empty). On return the model holds the
/// weights of the best monitored epoch.
///
/// Batches are visited sequentially in a seeded order, so a run is
/// reproducible for a fixed seed and fold.
pub fn train<T: Real>(
    model: &mut EmoTech<T>,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    fold: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::InvalidData("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut adam = AdamState::new(cfg.adam);
    let mut plateau = PlateauScheduler::new(cfg.lr0, cfg.plateau());
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best_store = model.store().clone();
    let mut order = train_idx.to_vec();
    let mut outcome = TrainOutcome {
        history: Vec::new(),
        best_epoch: 1,
        best_loss: f64::INFINITY,
        stopped_early: false,
        reached_target: false,
    };

    for epoch in 0..cfg.epochs {
        let lr = plateau.lr();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (mfcc, tokens, labels) = data.batch::<T>(chunk);
            let mut ctx = ForwardCtx::training(rng.next_u64());
            let mut step = || -> Result<_, ModelError> {
                let mut g = Graph::new();
                let out = model.forward(&mut g, &mut ctx, &mfcc, &tokens)?;
                let hits = g
                    .value(out.probs)
                    .data()
                    .chunks(NUM_CLASSES)
                    .zip(&labels)
                    .filter(|(row, &y)| argmax(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()) == y)
                    .count();
                let loss = g.cross_entropy(out.probs, &one_hot(&labels))?;
                let value = g.value(loss).item().map_or(f64::NAN, Real::as_f64);
                if !value.is_finite() {
                    return Err(TensorError::NonFiniteOutput { op: "cross_entropy" }.into());
                }
                Ok((value, hits, g.backward(loss)?.into_params()))
            };
            let (loss, hits, grads) = step().map_err(|e| match e {
                ModelError::Tensor(
                    t @ (TensorError::NonFiniteInput { .. } | TensorError::NonFiniteOutput { .. }),
                ) => TrainError::NonFiniteLoss {
                    fold,
                    epoch: epoch + 1,
                    batch: b,
                    detail: t.to_string(),
                },
                e => e.into(),
            })?;
            ctx.commit_stats(model.store_mut());
            adam.step(model.store_mut(), &grads, lr);
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
        }
        let n = order.len() as f64;
        let (train_loss, train_acc) = (loss_sum / n, correct as f64 / n);
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let probs = predict_probs(model, data, val_idx, cfg.batch_size)?;
            let (l, a) = loss_and_accuracy(&probs, data, val_idx);
            (Some(l), Some(a))
        };
        let log = EpochLog {
            fold,
            epoch: epoch + 1,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        on_epoch(&log);
        outcome.history.push(log);

        let monitored = val_loss.unwrap_or(train_loss);
        let decision = stopper.observe(epoch, monitored);
        if stopper.best_epoch() == Some(epoch) {
            best_store = model.store().clone();
            outcome.best_epoch = epoch + 1;
            outcome.best_loss = monitored;
        }
        plateau.observe(monitored);
        if cfg.target_train_accuracy.is_some_and(|t| train_acc >= t) {
            outcome.reached_target = true;
            break;
        }
        if let StopDecision::Stop { .. } = decision {
            outcome.stopped_early = true;
            break;
        }
    }
    *model.store_mut() = best_store;
    Ok(outcome)
}
