use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::nn::{softmax, truncate_outputs, Network, Targets, Tensor};
use crate::scalar::Real;

/// Mean of the members' softmax outputs.
pub fn ensemble_predict<S: Real>(nets: &[Network<S>], x: &Tensor<S>) -> Result<Tensor<S>> {
    let width = nets.first().ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?.output_width();
    ensemble_probabilities(nets, x, width)
}

/// Like [`ensemble_predict`] but each member is cut to its first `classes`
/// outputs before the softmax.
pub fn ensemble_probabilities<S: Real>(nets: &[Network<S>], x: &Tensor<S>, classes: usize) -> Result<Tensor<S>> {
    if nets.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let mut sum = vec![0.0f64; x.rows() * classes];
    for net in nets {
        if net.output_width() < classes {
            return Err(Error::shape(format!("member has {} outputs, need {classes}", net.output_width())));
        }
        let p = softmax(&truncate_outputs(&net.forward(x)?, classes)?);
        for (s, v) in sum.iter_mut().zip(p.data()) {
            *s += v.widen();
        }
    }
    let k = nets.len() as f64;
    Tensor::matrix(x.rows(), classes, sum.into_iter().map(|s| S::narrow(s / k)).collect())
}

/// Fraction of `data` whose ensemble argmax matches the label.
pub fn ensemble_accuracy<S: Real>(nets: &[Network<S>], data: &Dataset<S>) -> Result<f64> {
    let Targets::Classes(labels) = &data.targets else {
        return Err(Error::Unsupported("ensemble accuracy needs class labels".into()));
    };
    let probs = ensemble_probabilities(nets, &data.inputs, data.classes)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| {
            let row = probs.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
