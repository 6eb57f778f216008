//! Optimization, learning-rate control, cross-validation and evaluation.

mod cv;
mod dataset;
mod metrics;
mod optim;
mod schedule;
mod split;
mod trainer;


pub use cv::{
    ablation_grid, cross_validate, cross_validate_as, cv_folds, fold_class_counts, render_ablation, CvOptions,
    CvOutput, CvReport, FoldResult,
};
pub use dataset::{build_dataset, build_vocabulary, Dataset};
pub use metrics::{f1_score, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use optim::{adam_update, AdamConfig, AdamState};
pub use schedule::{early_stop, reduce_lr_on_plateau, EarlyStopping, PlateauConfig, PlateauScheduler, StopDecision};
pub use split::{kfold_split, Fold};
pub use trainer::{evaluate, predict_probs, train, EpochLog, TrainConfig, TrainOutcome};

use crate::dsp::DspError;
use crate::model::ModelError;
use crate::text::TextError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("class {class} has {count} samples, fewer than the {folds} folds")]
    ClassTooSmall { class: usize, count: usize, folds: usize },
    #[error("non-finite loss at fold {fold}, epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        fold: usize,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("record {0}: {1}")]
    Record(String, String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Text(#[from] TextError),
}
