use super::loss::{loss_eval, LossKind, Targets};
use super::network::{Gradients, Network, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Largest elementwise [`relative_error`] between two gradient sets.
pub fn max_relative_error<S: Real>(analytic: &Gradients<S>, numeric: &Gradients<S>) -> Result<f64> {
    if analytic.vectors.len() != numeric.vectors.len() {
        return Err(Error::shape("gradient layouts differ"));
    }
    let mut worst = 0.0f64;
    for (a, n) in analytic.vectors.iter().zip(&numeric.vectors) {
        if a.len() != n.len() {
            return Err(Error::shape("gradient layouts differ"));
        }
        for (&x, &y) in a.iter().zip(n) {
            let e = relative_error(x.widen(), y.widen());
            if !e.is_finite() {
                return Err(Error::NonFinite("gradient comparison".into()));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Central differences of an arbitrary scalar function of a network's
/// parameters. Only forward evaluations are used.
pub fn numeric_gradient_by<S: Real>(
    net: &Network<S>,
    eps: S,
    mut f: impl FnMut(&Network<S>) -> Result<S>,
) -> Result<Gradients<S>> {
    if !(eps > S::zero()) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let specs = net.param_specs();
    let mut grads = ParamSet::zeros(&specs);
    let mut probe = net.clone();
    for (k, spec) in specs.iter().enumerate() {
        for i in 0..spec.len {
            let orig = net.params()[k][i];
            probe.params_mut()[k][i] = orig + eps;
            let up = f(&probe)?;
            probe.params_mut()[k][i] = orig - eps;
            let down = f(&probe)?;
            probe.params_mut()[k][i] = orig;
            grads.vectors[k][i] = (up - down) / (eps + eps);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("numeric gradient".into()));
    }
    Ok(grads)
}

pub fn numeric_gradient<S: Real>(
    net: &Network<S>,
    batch: &Tensor<S>,
    targets: &Targets<S>,
    kind: LossKind,
    eps: S,
) -> Result<Gradients<S>> {
    numeric_gradient_by(net, eps, |n| loss_eval(&n.forward(batch)?, targets, kind))
}

/// Max relative error between the backward pass and central differences.
pub fn gradient_check<S: Real>(
    net: &Network<S>,
    batch: &Tensor<S>,
    targets: &Targets<S>,
    kind: LossKind,
    eps: S,
) -> Result<f64> {
    let (_, analytic) = net.backward(batch, targets, kind)?;
    let numeric = numeric_gradient(net, batch, targets, kind, eps)?;
    max_relative_error(&analytic, &numeric)
}
