use rand::Rng;

use super::{glorot_uniform, orthogonal, ParamStore};
use crate::tensor::{Graph, ParamKey, Real, Tensor, TensorError, Var};

/// One direction's parameters: input kernel `(in, 4h)`, recurrent kernel
/// `(h, 4h)` and bias `(4h)`, gate blocks ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub kernel: ParamKey,
    pub recurrent: ParamKey,
    pub bias: ParamKey,
}

impl LstmWeights {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let h4 = 4 * hidden;
        let kernel = store.add(format!("{name}/kernel"), glorot_uniform(&[input, h4], input, h4, rng), true);
        let recurrent = store.add(format!("{name}/recurrent_kernel"), orthogonal(hidden, h4, rng), true);
        let mut bias = Tensor::zeros(&[h4]);
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        let bias = store.add(format!("{name}/bias"), bias, true);
        Self {
            kernel,
            recurrent,
            bias,
        }
    }

    fn vars<'a, T: Real>(&self, g: &mut Graph<'a, T>, store: &'a ParamStore<T>) -> Result<[Var; 3], TensorError> {
        Ok([
            g.param(self.kernel, store.get(self.kernel))?,
            g.param(self.recurrent, store.get(self.recurrent))?,
            g.param(self.bias, store.get(self.bias))?,
        ])
    }
}

/// (Bi)directional LSTM over `x: (batch, T, in)`.
///
/// With `return_sequences` the per-step states of both directions are
/// concatenated to `(batch, T, dirs·h)`. Otherwise the result is the final state
/// of each direction, `[h_fwd(T-1) ; h_bwd(0)]`, shaped `(batch, dirs·h)`.
pub fn bilstm<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    forward: [Var; 3],
    backward: Option<[Var; 3]>,
    return_sequences: bool,
) -> Result<Var, TensorError> {
    let [w, u, b] = forward;
    let fwd = g.lstm_sequence(x, w, u, b, false)?;
    let bwd = match backward {
        Some([w, u, b]) => Some(g.lstm_sequence(x, w, u, b, true)?),
        None => None,
    };
    let (batch, steps, hidden) = {
        let s = g.shape(fwd);
        (s[0], s[1], s[2])
    };
    if return_sequences {
        return match bwd {
            Some(bwd) => g.concat(&[fwd, bwd], 2),
            None => Ok(fwd),
        };
    }
    let last = g.slice(fwd, 1, steps - 1, 1)?;
    let last = g.reshape(last, &[batch, hidden])?;
    match bwd {
        Some(bwd) => {
            let first = g.slice(bwd, 1, 0, 1)?;
            let first = g.reshape(first, &[batch, hidden])?;
            g.concat(&[last, first], 1)
        }
        None => Ok(last),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub forward: LstmWeights,
    pub backward: Option<LstmWeights>,
    pub input: usize,
    pub hidden: usize,
    pub return_sequences: bool,
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        bidirectional: bool,
        return_sequences: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let forward = LstmWeights::new(store, &format!("{name}/forward"), input, hidden, rng);
        let backward = bidirectional.then(|| LstmWeights::new(store, &format!("{name}/backward"), input, hidden, rng));
        Self {
            forward,
            backward,
            input,
            hidden,
            return_sequences,
        }
    }

    pub fn forward<'a, T: Real>(&self, g: &mut Graph<'a, T>, store: &'a ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let fwd = self.forward.vars(g, store)?;
        let bwd = match &self.backward {
            Some(wts) => Some(wts.vars(g, store)?),
            None => None,
        };
        bilstm(g, x, fwd, bwd, self.return_sequences)
    }

    pub fn directions(&self) -> usize {
        1 + usize::from(self.backward.is_some())
    }

    pub fn output_dim(&self) -> usize {
        self.directions() * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.directions() * 4 * self.hidden * (self.input + self.hidden + 1)
    }
}
