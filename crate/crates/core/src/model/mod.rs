//! The fused audio + text emotion classifier.
//!
//! Three blocks share one [`ParamStore`]: the audio block (stacked BiLSTM in
//! parallel with a Conv2D stack and a dense path), the text block (embedding,
//! BiLSTM and Conv1D, each max-pooled over time) and the classification head.

mod checkpoint;
mod params;

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::nn::{
    global_max_pool, max_pool2d, Activation, BatchNorm, Conv1d, Conv2d, Dense, Dropout, Embedding, ForwardCtx, Lstm,
    ParamStore,
};
use crate::tensor::{Graph, Real, Tensor, TensorError, Var};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta,
    TrainingMeta, CHECKPOINT_VERSION,
};
pub use params::{count_parameters, ParameterGroup, ParameterReport, REFERENCE_PARAMETERS};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which input branches feed the classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
    #[default]
    Fused,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Fused];

    pub fn uses_audio(self) -> bool {
        self != Modality::Text
    }

    pub fn uses_text(self) -> bool {
        self != Modality::Audio
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Fused => "fused",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modality {s:?} (expected audio, text or fused)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modality: Modality,
    /// MFCC frames per utterance.
    pub frames: usize,
    pub n_mfcc: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Units per direction in every BiLSTM.
    pub lstm_units: usize,
    pub conv_filters: Vec<usize>,
    pub audio_dense: [usize; 2],
    pub text_conv_filters: usize,
    pub text_conv_kernel: usize,
    pub head_units: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Fused,
            frames: 740,
            n_mfcc: 13,
            max_tokens: 98,
            vocab_size: 2843,
            embed_dim: 200,
            lstm_units: 64,
            conv_filters: vec![32, 64, 128],
            audio_dense: [512, 128],
            text_conv_filters: 128,
            text_conv_kernel: 5,
            head_units: vec![256, 128, 64],
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab_size(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    /// Time and frequency extent after the pooling stages.
    pub fn pooled_extent(&self) -> (usize, usize) {
        let shrink = 1usize << self.conv_filters.len();
        (self.frames / shrink, self.n_mfcc / shrink)
    }

    /// Length of the flattened conv-stack output.
    pub fn flat_dim(&self) -> usize {
        let (t, f) = self.pooled_extent();
        t * f * self.conv_filters.last().copied().unwrap_or(1)
    }

    pub fn audio_dim(&self) -> usize {
        2 * self.lstm_units + self.audio_dense[1]
    }

    pub fn text_dim(&self) -> usize {
        2 * self.lstm_units + self.text_conv_filters
    }

    pub fn fused_dim(&self) -> usize {
        let audio = if self.modality.uses_audio() { self.audio_dim() } else { 0 };
        let text = if self.modality.uses_text() { self.text_dim() } else { 0 };
        audio + text
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let shrink = 1usize << self.conv_filters.len();
        if self.modality.uses_audio() {
            if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
                return bad(format!("conv filters {:?}", self.conv_filters));
            }
            if self.frames < shrink || self.n_mfcc < shrink {
                return bad(format!(
                    "input {}x{} too small for {} pooling stages",
                    self.frames,
                    self.n_mfcc,
                    self.conv_filters.len()
                ));
            }
        }
        if self.modality.uses_text() && (self.vocab_size < 2 || self.max_tokens == 0 || self.embed_dim == 0) {
            return bad(format!(
                "vocab {} / tokens {} / embedding {}",
                self.vocab_size, self.max_tokens, self.embed_dim
            ));
        }
        if self.lstm_units == 0 || self.head_units.contains(&0) {
            return bad("zero-width layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AudioBlock {
    pub lstm: [Lstm; 2],
    pub convs: Vec<(Conv2d, BatchNorm)>,
    pub dense: [Dense; 2],
    pub dropout: Dropout,
    flat_dim: usize,
}

impl AudioBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.lstm_units;
        let lstm = [
            Lstm::new(store, "audio/bilstm/layer1", cfg.n_mfcc, h, true, true, rng),
            Lstm::new(store, "audio/bilstm/layer2", 2 * h, h, true, false, rng),
        ];
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &cout) in cfg.conv_filters.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("audio/conv/conv{}", i + 1), (3, 3), cin, cout, rng);
            let bn = BatchNorm::new(store, &format!("audio/batch_norm/bn{}", i + 1), cout);
            convs.push((conv, bn));
            cin = cout;
        }
        let [d1, d2] = cfg.audio_dense;
        let flat_dim = cfg.flat_dim();
        let dense = [
            Dense::new(store, "audio/dense/dense1", flat_dim, d1, Activation::Relu, rng),
            Dense::new(store, "audio/dense/dense2", d1, d2, Activation::Relu, rng),
        ];
        Self {
            lstm,
            convs,
            dense,
            dropout: Dropout::new(cfg.dropout),
            flat_dim,
        }
    }

    /// `mfcc: (batch, frames, n_mfcc)` → `(batch, 2h + dense)`.
    pub fn forward<'a, T: Real>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        ctx: &mut ForwardCtx<T>,
        mfcc: Var,
    ) -> Result<Var, TensorError> {
        let seq = self.lstm[0].forward(g, store, mfcc)?;
        let state = self.lstm[1].forward(g, store, seq)?;

        let (b, t, c) = {
            let s = g.shape(mfcc);
            (s[0], s[1], s[2])
        };
        let mut x = g.reshape(mfcc, &[b, t, c, 1])?;
        for (conv, bn) in &self.convs {
            x = conv.forward(g, store, x)?;
            x = bn.forward(g, store, ctx, x)?;
            x = g.relu(x)?;
            x = max_pool2d(g, x)?;
        }
        x = g.reshape(x, &[b, self.flat_dim])?;
        x = self.dense[0].forward(g, store, x)?;
        x = self.dropout.forward(g, ctx, x)?;
        x = self.dense[1].forward(g, store, x)?;
        g.concat(&[state, x], 1)
    }

    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }
}

#[derive(Clone, Debug)]
pub struct TextBlock {
    pub embedding: Embedding,
    pub lstm: Lstm,
    pub conv: Conv1d,
    pub max_tokens: usize,
}

impl TextBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let embedding = Embedding::new(store, "text/embedding", cfg.vocab_size, cfg.embed_dim, rng);
        let lstm = Lstm::new(store, "text/bilstm", cfg.embed_dim, cfg.lstm_units, true, true, rng);
        let conv = Conv1d::new(
            store,
            "text/conv1d",
            cfg.text_conv_kernel,
            cfg.embed_dim,
            cfg.text_conv_filters,
            Activation::Relu,
            rng,
        );
        Self {
            embedding,
            lstm,
            conv,
            max_tokens: cfg.max_tokens,
        }
    }

    /// Token ids, `batch · max_tokens` of them, → `(batch, 2h + filters)`.
    pub fn forward<'a, T: Real>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        tokens: &[usize],
    ) -> Result<Var, TensorError> {
        let batch = tokens.len() / self.max_tokens;
        let emb = self.embedding.forward(g, store, tokens, &[batch, self.max_tokens])?;
        let seq = self.lstm.forward(g, store, emb)?;
        let recurrent = global_max_pool(g, seq)?;
        let conv = self.conv.forward(g, store, emb)?;
        let conv = global_max_pool(g, conv)?;
        g.concat(&[recurrent, conv], 1)
    }
}

#[derive(Clone, Debug)]
pub struct ClassificationBlock {
    pub hidden: Vec<Dense>,
    pub output: Dense,
    pub dropout: Dropout,
}

impl ClassificationBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::new();
        let mut width = cfg.fused_dim();
        for (i, &units) in cfg.head_units.iter().enumerate() {
            hidden.push(Dense::new(
                store,
                &format!("classifier/dense/dense{}", i + 1),
                width,
                units,
                Activation::Relu,
                rng,
            ));
            width = units;
        }
        let output = Dense::new(store, "classifier/output/dense", width, NUM_CLASSES, Activation::Softmax, rng);
        Self {
            hidden,
            output,
            dropout: Dropout::new(cfg.dropout),
        }
    }

    /// Dropout follows every hidden layer except the last.
    pub fn forward<'a, T: Real>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        ctx: &mut ForwardCtx<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let mut x = x;
        for (i, layer) in self.hidden.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i + 1 < self.hidden.len() {
                x = self.dropout.forward(g, ctx, x)?;
            }
        }
        self.output.forward(g, store, x)
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub audio: Option<Var>,
    pub text: Option<Var>,
    pub fused: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct EmoTech<T: Real = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    audio: Option<AudioBlock>,
    text: Option<TextBlock>,
    head: ClassificationBlock,
}

impl<T: Real> EmoTech<T> {
    /// Freshly initialized model; the same `seed` always gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let audio = config.modality.uses_audio().then(|| AudioBlock::new(&mut store, &config, &mut rng));
        let text = config.modality.uses_text().then(|| TextBlock::new(&mut store, &config, &mut rng));
        let head = ClassificationBlock::new(&mut store, &config, &mut rng);
        Ok(Self {
            config,
            store,
            audio,
            text,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn audio_block(&self) -> Option<&AudioBlock> {
        self.audio.as_ref()
    }

    pub fn text_block(&self) -> Option<&TextBlock> {
        self.text.as_ref()
    }

    pub fn head(&self) -> &ClassificationBlock {
        &self.head
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Real>(&self) -> EmoTech<U> {
        EmoTech {
            config: self.config.clone(),
            store: self.store.cast(),
            audio: self.audio.clone(),
            text: self.text.clone(),
            head: self.head.clone(),
        }
    }

    /// Checks the inputs against the configuration and returns the batch size.
    pub fn batch_size(&self, mfcc: &Tensor<T>, tokens: &[usize]) -> Result<usize, ModelError> {
        let cfg = &self.config;
        let mut batch = None;
        if cfg.modality.uses_audio() {
            let s = mfcc.shape();
            if s.len() != 3 || s[1] != cfg.frames || s[2] != cfg.n_mfcc {
                return Err(ModelError::ShapeMismatch {
                    what: "mfcc batch",
                    expected: vec![s.first().copied().unwrap_or(0), cfg.frames, cfg.n_mfcc],
                    got: s.to_vec(),
                });
            }
            batch = Some(s[0]);
        }
        if cfg.modality.uses_text() {
            if !tokens.len().is_multiple_of(cfg.max_tokens) {
                return Err(ModelError::ShapeMismatch {
                    what: "token batch",
                    expected: vec![tokens.len() / cfg.max_tokens, cfg.max_tokens],
                    got: vec![tokens.len()],
                });
            }
            let b = tokens.len() / cfg.max_tokens;
            if let Some(a) = batch {
                if a != b {
                    return Err(ModelError::ShapeMismatch {
                        what: "token batch",
                        expected: vec![a, cfg.max_tokens],
                        got: vec![b, cfg.max_tokens],
                    });
                }
            }
            if let Some(&id) = tokens.iter().find(|&&id| id >= cfg.vocab_size) {
                return Err(ModelError::VocabularyMismatch(format!(
                    "token id {id} outside embedding table of {} rows",
                    cfg.vocab_size
                )));
            }
            batch = Some(b);
        }
        match batch {
            Some(0) | None => Err(ModelError::ShapeMismatch {
                what: "batch",
                expected: vec![1],
                got: vec![0],
            }),
            Some(b) => Ok(b),
        }
    }

    /// Builds the forward pass on `g`. `mfcc` is `(batch, frames, n_mfcc)` and
    /// `tokens` holds `batch · max_tokens` ids; an input whose branch is disabled
    /// by the modality is ignored.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        ctx: &mut ForwardCtx<T>,
        mfcc: &Tensor<T>,
        tokens: &[usize],
    ) -> Result<ForwardOutput, ModelError> {
        self.batch_size(mfcc, tokens)?;
        let audio = match &self.audio {
            Some(block) => {
                let x = g.input(mfcc.clone(), false)?;
                Some(block.forward(g, &self.store, ctx, x)?)
            }
            None => None,
        };
        let text = match &self.text {
            Some(block) => Some(block.forward(g, &self.store, tokens)?),
            None => None,
        };
        let fused = match (audio, text) {
            (Some(a), Some(t)) => g.concat(&[a, t], 1)?,
            (Some(a), None) => a,
            (None, Some(t)) => t,
            (None, None) => unreachable!("a model always has at least one branch"),
        };
        let probs = self.head.forward(g, &self.store, ctx, fused)?;
        Ok(ForwardOutput {
            audio,
            text,
            fused,
            probs,
        })
    }

    /// Inference-mode class probabilities, `(batch, 5)`.
    pub fn predict(&self, mfcc: &Tensor<T>, tokens: &[usize]) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::inference();
        let out = self.forward(&mut g, &mut ctx, mfcc, tokens)?;
        Ok(g.value(out.probs).clone())
    }
}
