use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, kfold_split, train, ClassMetrics, ConfusionMatrix, Dataset, EpochLog, Fold, MetricsReport, TrainConfig, TrainError};
use crate::data::{Origin, NUM_CLASSES};
use crate::model::{save_checkpoint, CheckpointMeta, EmoTech, Modality, ModelConfig, TrainingMeta};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    /// Fold over original recordings only and keep each augmented copy in the
    /// training side of its source's fold; never validate on synthetic data.
    pub split_before_augment: bool,
}

/// Validation folds over `data`.
///
/// By default every example, synthetic or not, is dealt into folds
/// (stratified). With `split_before_augment` only originals are dealt;
/// augmented examples join the training side of the fold that holds their
/// source and are dropped when the source is unknown.
pub fn cv_folds(data: &Dataset, k: usize, seed: u64, opts: CvOptions) -> Result<Vec<Fold>, TrainError> {
    if !opts.split_before_augment {
        return kfold_split(&data.labels, k, seed, true);
    }
    let originals = data.originals();
    let labels: Vec<usize> = originals.iter().map(|&i| data.labels[i]).collect();
    let folds = kfold_split(&labels, k, seed, true)?;
    let augmented: Vec<usize> = (0..data.len()).filter(|&i| data.origins[i] == Origin::Augmented).collect();
    let orphans = augmented
        .iter()
        .filter(|&&i| {
            data.sources[i]
                .as_ref()
                .is_none_or(|s| !originals.iter().any(|&o| data.ids[o] == *s))
        })
        .count();
    if orphans > 0 {
        log::warn!("{orphans} augmented examples have no known source and are left out");
    }
    Ok(folds
        .into_iter()
        .map(|f| {
            let train_ids: HashSet<&str> = f.train.iter().map(|&j| data.ids[originals[j]].as_str()).collect();
            let mut train: Vec<usize> = f.train.iter().map(|&j| originals[j]).collect();
            train.extend(
                augmented
                    .iter()
                    .copied()
                    .filter(|&i| data.sources[i].as_deref().is_some_and(|s| train_ids.contains(s))),
            );
            train.sort_unstable();
            Fold {
                train,
                val: f.val.iter().map(|&j| originals[j]).collect(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub modality: Modality,
    pub augmented: bool,
    pub folds: Vec<FoldResult>,
    /// Fold means of every score; the confusion matrix is summed over folds.
    pub mean: MetricsReport,
    /// 1-based fold with the highest validation accuracy.
    pub best_fold: usize,
}

impl CvReport {
    pub fn from_folds(modality: Modality, augmented: bool, folds: Vec<FoldResult>) -> Self {
        let n = folds.len().max(1) as f64;
        let mut mean = MetricsReport::default();
        let mut confusion = ConfusionMatrix::default();
        for f in &folds {
            let m = &f.metrics;
            confusion.add(&m.confusion);
            mean.accuracy += m.accuracy / n;
            mean.macro_precision += m.macro_precision / n;
            mean.macro_recall += m.macro_recall / n;
            mean.macro_f1 += m.macro_f1 / n;
            for (acc, c) in mean.per_class.iter_mut().zip(&m.per_class) {
                *acc = ClassMetrics {
                    precision: acc.precision + c.precision / n,
                    recall: acc.recall + c.recall / n,
                    f1: acc.f1 + c.f1 / n,
                    accuracy: acc.accuracy + c.accuracy / n,
                    support: acc.support + c.support,
                };
            }
        }
        mean.confusion = confusion;
        let best_fold = folds
            .iter()
            .max_by(|a, b| a.metrics.accuracy.total_cmp(&b.metrics.accuracy))
            .map_or(0, |f| f.fold);
        Self {
            modality,
            augmented,
            folds,
            mean,
            best_fold,
        }
    }

    pub fn best(&self) -> Option<&FoldResult> {
        self.folds.iter().find(|f| f.fold == self.best_fold)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "modality {}, augmented {}", self.modality, self.augmented);
        for f in &self.folds {
            let _ = writeln!(
                s,
                "fold {}: accuracy {:.4}, macro f1 {:.4}, best epoch {} of {}",
                f.fold, f.metrics.accuracy, f.metrics.macro_f1, f.best_epoch, f.epochs_run
            );
        }
        let _ = writeln!(s, "\nmean over folds:");
        s.push_str(&self.mean.render_table());
        if let Some(b) = self.best() {
            let _ = writeln!(s, "\nbest fold {} (accuracy {:.4}):", b.fold, b.metrics.accuracy);
            s.push_str(&b.metrics.render_table());
        }
        s
    }
}

/// Where [`cross_validate`] writes per-fold checkpoints.
pub struct CvOutput<'p> {
    pub dir: &'p Path,
    pub vocab_digest: Option<String>,
}

/// k-fold training and evaluation; each fold starts from a fresh model seeded
/// with `cfg.seed + fold`.
pub fn cross_validate(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: CvOptions,
    output: Option<&CvOutput<'_>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<CvReport, TrainError> {
    cross_validate_as::<f32>(data, model_cfg, cfg, opts, output, on_epoch)
}

/// [`cross_validate`] at a chosen precision.
pub fn cross_validate_as<T: Real>(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: CvOptions,
    output: Option<&CvOutput<'_>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<CvReport, TrainError> {
    cfg.validate()?;
    let folds = cv_folds(data, cfg.folds, cfg.seed, opts)?;
    let mut results = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let mut model = EmoTech::<T>::new(model_cfg.clone(), cfg.seed.wrapping_add(f as u64))?;
        let outcome = train(&mut model, data, &fold.train, &fold.val, cfg, f + 1, on_epoch)?;
        let metrics = evaluate(&model, data, &fold.val)?;
        log::info!("fold {}: validation accuracy {:.4}", f + 1, metrics.accuracy);
        if let Some(out) = output {
            let meta = CheckpointMeta {
                vocab_digest: out.vocab_digest.clone(),
                training: TrainingMeta {
                    fold: Some(f + 1),
                    epoch: Some(outcome.best_epoch),
                    metrics: [
                        ("val_loss".to_string(), outcome.best_loss),
                        ("val_accuracy".to_string(), metrics.accuracy),
                        ("val_macro_f1".to_string(), metrics.macro_f1),
                    ]
                    .into(),
                },
            };
            save_checkpoint(&model, &meta, out.dir.join(format!("fold{}.emtc", f + 1)))?;
        }
        results.push(FoldResult {
            fold: f + 1,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            best_val_loss: outcome.best_loss,
            metrics,
        });
    }
    Ok(CvReport::from_folds(model_cfg.modality, data.origins.contains(&Origin::Augmented), results))
}

/// Modality × augmentation grid: every modality trained on originals only and
/// on the full (augmented) dataset.
pub fn ablation_grid(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: CvOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<CvReport>, TrainError> {
    let originals = data.subset(&data.originals());
    let mut out = Vec::new();
    for modality in Modality::ALL {
        for (augmented, subset) in [(false, &originals), (true, data)] {
            let mc = ModelConfig {
                modality,
                ..model_cfg.clone()
            };
            let mut report = cross_validate(subset, &mc, cfg, opts, None, on_epoch)?;
            report.augmented = augmented;
            out.push(report);
        }
    }
    Ok(out)
}

/// Accuracy table in the layout of the modality comparison: rows are input
/// modalities, columns mean and best-fold accuracy.
pub fn render_ablation(reports: &[CvReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>12} {:>10} {:>10}", "modality", "augmentation", "mean acc", "best acc");
    for r in reports {
        let name = match r.modality {
            Modality::Audio => "speech",
            Modality::Text => "text",
            Modality::Fused => "speech + text",
        };
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>10.4} {:>10.4}",
            name,
            if r.augmented { "yes" } else { "no" },
            r.mean.accuracy,
            r.best().map_or(0.0, |b| b.metrics.accuracy)
        );
    }
    s
}

/// Per-class counts on the validation side of `fold`.
pub fn fold_class_counts(labels: &[usize], fold: &Fold) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for &i in &fold.val {
        c[labels[i]] += 1;
    }
    c
}
