//! Neural layers on top of the autodiff graph.
//!
//! Each layer owns [`ParamKey`]s into a [`ParamStore`]; its arithmetic lives in a
//! free function over graph [`Var`]s so it can be exercised without a store.

mod init;
mod layers;
mod lstm;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{BatchStats, ParamKey, Real, Tensor};

pub use init::{glorot_uniform, orthogonal, uniform};
pub use layers::{
    batch_norm, conv1d, conv2d, dense, dropout, dropout_mask, embedding, global_max_pool, max_pool2d, Activation,
    BatchNorm, Conv1d, Conv2d, Dense, Dropout, Embedding,
};
pub use lstm::{bilstm, Lstm, LstmWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Batch-norm running statistics are stored here too but never optimized.
    pub trainable: bool,
}

/// Flat, ordered registry of every array a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamKey {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamKey(self.entries.len() - 1)
    }

    pub fn get(&self, key: ParamKey) -> &Tensor<T> {
        &self.entries[key.0].value
    }

    pub fn get_mut(&mut self, key: ParamKey) -> &mut Tensor<T> {
        &mut self.entries[key.0].value
    }

    pub fn entry(&self, key: ParamKey) -> &ParamEntry<T> {
        &self.entries[key.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> {
        (0..self.entries.len()).map(ParamKey)
    }

    pub fn find(&self, name: &str) -> Option<ParamKey> {
        self.entries.iter().position(|e| e.name == name).map(ParamKey)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalars across all entries, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Per-pass state: train/inference switch, the dropout stream, and batch-norm
/// statistics to fold into the running averages once the graph is released.
pub struct ForwardCtx<T: Real> {
    pub training: bool,
    rng: ChaCha8Rng,
    pending_stats: Vec<(BatchNorm, BatchStats<T>)>,
}

impl<T: Real> ForwardCtx<T> {
    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn training(seed: u64) -> Self {
        Self::new(true, seed)
    }

    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending_stats: Vec::new(),
        }
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn record_stats(&mut self, layer: BatchNorm, stats: BatchStats<T>) {
        self.pending_stats.push((layer, stats));
    }

    /// Applies every recorded batch-statistics update to the running averages.
    pub fn commit_stats(&mut self, store: &mut ParamStore<T>) {
        for (layer, stats) in self.pending_stats.drain(..) {
            layer.update_running(store, &stats);
        }
    }

    pub fn discard_stats(&mut self) {
        self.pending_stats.clear();
    }
}
