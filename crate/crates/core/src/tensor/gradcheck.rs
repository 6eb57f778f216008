//! Finite-difference verification of graph gradients.
//!
//! Reference derivatives are always evaluated in `f64` with the five-point
//! central stencil, whatever precision the autodiff pass under test uses.

use super::{Graph, Real, Tensor, TensorError, Var};

/// A scalar function of several tensors, expressed as graph construction so it
/// can be instantiated at any precision.
pub trait Differentiable {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var, TensorError>;
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|autodiff - numeric| / (|numeric| + 1e-8)` over all elements.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// The error measure used throughout the gradient tests.
pub fn relative_error(autodiff: f64, numeric: f64) -> f64 {
    (autodiff - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Five-point central difference of `f` at 0: `(8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h`.
pub fn central_difference<E>(mut f: impl FnMut(f64) -> Result<f64, E>, h: f64) -> Result<f64, E> {
    let m2 = f(-2.0 * h)?;
    let m1 = f(-h)?;
    let p1 = f(h)?;
    let p2 = f(2.0 * h)?;
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

fn evaluate<T: Real, F: Differentiable>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, TensorError> {
    let mut g = Graph::<T>::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.cast(), false))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f.eval(&mut g, &vars)?;
    g.value(loss)
        .item()
        .map(Real::as_f64)
        .ok_or_else(|| TensorError::NonScalarLoss {
            shape: g.shape(loss).to_vec(),
        })
}

/// Autodiff gradients at precision `T` for every input element.
pub fn autodiff<T: Real, F: Differentiable>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, TensorError> {
    let mut g = Graph::<T>::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.cast(), true))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f.eval(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .map(|v| grads.get(*v).expect("differentiable leaf").cast())
        .collect())
}

/// Compares `T`-precision autodiff against `f64` central differences on every
/// element of every input.
pub fn check_gradients<T: Real, F: Differentiable>(f: &F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheck, TensorError> {
    let analytic = autodiff::<T, F>(f, inputs)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for idx in 0..probe[k].len() {
            let orig = probe[k].data()[idx];
            let numeric = central_difference(
                |step| {
                    probe[k].data_mut()[idx] = orig + step;
                    evaluate::<f64, F>(f, &probe)
                },
                h,
            )?;
            probe[k].data_mut()[idx] = orig;
            let err = relative_error(grad.data()[idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_is_exact_on_quartics() {
        // f(x) = (1 + x)^4 at 0 has derivative 4.
        let d = central_difference(|x| Ok::<_, ()>((1.0 + x).powi(4)), 1e-2).unwrap();
        assert!((d - 4.0).abs() < 1e-10);
    }

    #[test]
    fn relative_error_is_zero_for_equal_values() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.5, 2.5), 0.0);
    }
}
