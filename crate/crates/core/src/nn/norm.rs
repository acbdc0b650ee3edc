//! Group normalization over the feature axis of a `batch × channels` tensor.
//!
//! Channels are split into `groups` contiguous blocks; each block of each
//! sample is standardized with its own mean and (biased) variance, then an
//! affine `gain * x_hat + bias` is applied per channel. No running statistics
//! are kept, so evaluation never depends on batch composition.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Normalized activations and the per-(sample, group) inverse standard
/// deviations, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormTrace<S> {
    pub normalized: Vec<S>,
    pub inv_std: Vec<f64>,
}

fn check<S: Real>(x: &Tensor<S>, groups: usize, gain: &[S], bias: &[S]) -> Result<usize> {
    let channels = x.cols();
    if groups == 0 || channels % groups != 0 {
        return Err(Error::shape(format!(
            "{channels} channels are not divisible into {groups} groups"
        )));
    }
    if gain.len() != channels || bias.len() != channels {
        return Err(Error::shape(format!(
            "affine parameters of length {}/{} for {channels} channels",
            gain.len(),
            bias.len()
        )));
    }
    Ok(channels / groups)
}

pub(crate) fn forward_traced<S: Real>(
    x: &Tensor<S>,
    groups: usize,
    gain: &[S],
    bias: &[S],
) -> Result<(Tensor<S>, GroupNormTrace<S>)> {
    let size = check(x, groups, gain, bias)?;
    let channels = x.cols();
    let mut out = vec![S::zero(); x.data().len()];
    let mut normalized = vec![S::zero(); x.data().len()];
    let mut inv_std = Vec::with_capacity(x.rows() * groups);

    for r in 0..x.rows() {
        let row = x.row(r);
        for g in 0..groups {
            let block = &row[g * size..(g + 1) * size];
            let mean = block.iter().map(|v| v.widen()).sum::<f64>() / size as f64;
            let var = block
                .iter()
                .map(|v| (v.widen() - mean).powi(2))
                .sum::<f64>()
                / size as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(inv);
            for (k, v) in block.iter().enumerate() {
                let c = g * size + k;
                let xh = S::narrow((v.widen() - mean) * inv);
                normalized[r * channels + c] = xh;
                out[r * channels + c] = gain[c] * xh + bias[c];
            }
        }
    }
    let out = Tensor::new(x.shape().to_vec(), out)?;
    out.ensure_finite("group norm output")?;
    Ok((out, GroupNormTrace { normalized, inv_std }))
}

pub fn group_normalize<S: Real>(
    x: &Tensor<S>,
    groups: usize,
    gain: &[S],
    bias: &[S],
) -> Result<Tensor<S>> {
    forward_traced(x, groups, gain, bias).map(|(y, _)| y)
}

/// Returns `(d_input, d_gain, d_bias)` given the upstream gradient.
pub(crate) fn backward<S: Real>(
    grad_out: &Tensor<S>,
    trace: &GroupNormTrace<S>,
    groups: usize,
    gain: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let channels = grad_out.cols();
    let size = channels / groups;
    let mut d_in = vec![S::zero(); grad_out.data().len()];
    let mut d_gain = vec![0.0f64; channels];
    let mut d_bias = vec![0.0f64; channels];
    let m = size as f64;

    for r in 0..grad_out.rows() {
        let g_row = grad_out.row(r);
        for g in 0..groups {
            let inv = trace.inv_std[r * groups + g];
            let mut sum_dxh = 0.0f64;
            let mut sum_dxh_xh = 0.0f64;
            for k in 0..size {
                let c = g * size + k;
                let go = g_row[c].widen();
                let xh = trace.normalized[r * channels + c].widen();
                d_gain[c] += go * xh;
                d_bias[c] += go;
                let dxh = go * gain[c].widen();
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
            }
            for k in 0..size {
                let c = g * size + k;
                let xh = trace.normalized[r * channels + c].widen();
                let dxh = g_row[c].widen() * gain[c].widen();
                d_in[r * channels + c] = S::narrow(inv / m * (m * dxh - sum_dxh - xh * sum_dxh_xh));
            }
        }
    }
    (
        d_in,
        d_gain.into_iter().map(S::narrow).collect(),
        d_bias.into_iter().map(S::narrow).collect(),
    )
}
