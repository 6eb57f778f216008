use rand::Rng;

use super::{glorot_uniform, uniform, ForwardCtx, ParamStore};
use crate::tensor::{BatchStats, Graph, NormMode, ParamKey, Real, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
    Softmax,
}

fn activate<T: Real>(g: &mut Graph<'_, T>, x: Var, act: Activation) -> Result<Var, TensorError> {
    match act {
        Activation::None => Ok(x),
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
        Activation::Softmax => g.softmax(x),
    }
}

/// `act(x·W + b)` for `x: (batch, in)`.
pub fn dense<T: Real>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, TensorError> {
    let y = g.matmul(x, w)?;
    let y = g.add_bias(y, b)?;
    activate(g, y, act)
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamKey,
    pub bias: ParamKey,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(out_dim > 0, "dense layer needs at least one unit");
        let weight = store.add(
            format!("{name}/kernel"),
            glorot_uniform(&[in_dim, out_dim], in_dim, out_dim, rng),
            true,
        );
        let bias = store.add(format!("{name}/bias"), Tensor::zeros(&[out_dim]), true);
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'a, T: Real>(&self, g: &mut Graph<'a, T>, store: &'a ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.weight, store.get(self.weight))?;
        let b = g.param(self.bias, store.get(self.bias))?;
        dense(g, x, w, b, self.activation)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

pub fn conv2d<T: Real>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    g.conv2d(x, w, b)
}

/// 2-D "same" convolution with stride 1; kernel laid out `(kh, kw, in, out)`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub kernel: ParamKey,
    pub bias: ParamKey,
    pub kernel_size: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel_size: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (kh, kw) = kernel_size;
        let kernel = store.add(
            format!("{name}/kernel"),
            glorot_uniform(
                &[kh, kw, in_channels, out_channels],
                kh * kw * in_channels,
                kh * kw * out_channels,
                rng,
            ),
            true,
        );
        let bias = store.add(format!("{name}/bias"), Tensor::zeros(&[out_channels]), true);
        Self {
            kernel,
            bias,
            kernel_size,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'a, T: Real>(&self, g: &mut Graph<'a, T>, store: &'a ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.kernel, store.get(self.kernel))?;
        let b = g.param(self.bias, store.get(self.bias))?;
        conv2d(g, x, w, b)
    }

    pub fn param_count(&self) -> usize {
        let (kh, kw) = self.kernel_size;
        kh * kw * self.in_channels * self.out_channels + self.out_channels
    }
}

/// 1-D "same" convolution followed by `act`; kernel laid out `(k, in, out)`.
pub fn conv1d<T: Real>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, TensorError> {
    let y = g.conv1d(x, w, b)?;
    activate(g, y, act)
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub kernel: ParamKey,
    pub bias: ParamKey,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl Conv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel = store.add(
            format!("{name}/kernel"),
            glorot_uniform(
                &[kernel_size, in_channels, out_channels],
                kernel_size * in_channels,
                kernel_size * out_channels,
                rng,
            ),
            true,
        );
        let bias = store.add(format!("{name}/bias"), Tensor::zeros(&[out_channels]), true);
        Self {
            kernel,
            bias,
            kernel_size,
            in_channels,
            out_channels,
            activation,
        }
    }

    pub fn forward<'a, T: Real>(&self, g: &mut Graph<'a, T>, store: &'a ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.kernel, store.get(self.kernel))?;
        let b = g.param(self.bias, store.get(self.bias))?;
        conv1d(g, x, w, b, self.activation)
    }

    pub fn param_count(&self) -> usize {
        self.kernel_size * self.in_channels * self.out_channels + self.out_channels
    }
}

/// Non-overlapping 2×2 max pooling with floor semantics.
pub fn max_pool2d<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
    g.max_pool2d(x, (2, 2))
}

/// `(batch, T, C) → (batch, C)`, maximum over time.
pub fn global_max_pool<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
    if g.shape(x).len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "global_max_pool",
            lhs: g.shape(x).to_vec(),
            rhs: vec![0, 0, 0],
        });
    }
    g.max_axis(x, 1)
}

pub fn batch_norm<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: NormMode<'_, T>,
) -> Result<(Var, Option<BatchStats<T>>), TensorError> {
    g.batch_norm(x, gamma, beta, mode)
}

/// Channel-last batch normalization with running statistics for inference.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamKey,
    pub beta: ParamKey,
    pub running_mean: ParamKey,
    pub running_var: ParamKey,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}/gamma"), Tensor::full(&[channels], T::one()), true),
            beta: store.add(format!("{name}/beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}/moving_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(format!("{name}/moving_variance"), Tensor::full(&[channels], T::one()), false),
            channels,
            momentum: 0.99,
            epsilon: 1e-3,
        }
    }

    pub fn forward<'a, T: Real>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        ctx: &mut ForwardCtx<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let gamma = g.param(self.gamma, store.get(self.gamma))?;
        let beta = g.param(self.beta, store.get(self.beta))?;
        let eps = T::of(self.epsilon);
        let mode = if ctx.training {
            NormMode::Train { eps }
        } else {
            NormMode::Infer {
                mean: store.get(self.running_mean).data(),
                var: store.get(self.running_var).data(),
                eps,
            }
        };
        let (y, stats) = batch_norm(g, x, gamma, beta, mode)?;
        if let Some(stats) = stats {
            ctx.record_stats(*self, stats);
        }
        Ok(y)
    }

    /// `running = momentum·running + (1 − momentum)·batch`.
    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::of(self.momentum);
        let one_minus = T::one() - m;
        for (r, &b) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + one_minus * b;
        }
        for (r, &b) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = (m * *r + one_minus * b).max(T::zero());
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels
    }
}

/// Inverted-dropout mask: zero with probability `rate`, else `1 / (1 − rate)`.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn dropout<T: Real>(g: &mut Graph<'_, T>, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            reason: format!("rate {rate} outside [0, 1)"),
        });
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let mask = Tensor::new(shape.clone(), dropout_mask(shape.iter().product(), rate, rng))?;
    let mask = g.constant(mask)?;
    g.mul(x, mask)
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ctx: &mut ForwardCtx<T>, x: Var) -> Result<Var, TensorError> {
        let training = ctx.training;
        dropout(g, x, self.rate, training, ctx.rng())
    }
}

pub fn embedding<T: Real>(
    g: &mut Graph<'_, T>,
    table: Var,
    ids: &[usize],
    id_shape: &[usize],
    pad_id: Option<usize>,
) -> Result<Var, TensorError> {
    g.embedding(table, ids, id_shape, pad_id)
}

/// Trainable lookup table; row `pad_id` is zero and frozen.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamKey,
    pub vocab_size: usize,
    pub dim: usize,
    pub pad_id: usize,
}

impl Embedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let pad_id = 0;
        let mut table: Tensor<T> = uniform(&[vocab_size, dim], 0.05, rng);
        if vocab_size > 0 {
            table.data_mut()[pad_id * dim..(pad_id + 1) * dim].fill(T::zero());
        }
        Self {
            table: store.add(format!("{name}/embeddings"), table, true),
            vocab_size,
            dim,
            pad_id,
        }
    }

    pub fn forward<'a, T: Real>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        ids: &[usize],
        id_shape: &[usize],
    ) -> Result<Var, TensorError> {
        let table = g.param(self.table, store.get(self.table))?;
        embedding(g, table, ids, id_shape, Some(self.pad_id))
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.dim
    }
}
