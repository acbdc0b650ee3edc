use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Square,
    Abs,
    CrossEntropy,
    #[serde(rename = "binary_01")]
    Binary01,
    Logistic,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Square,
        LossKind::Abs,
        LossKind::CrossEntropy,
        LossKind::Binary01,
        LossKind::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::Abs => "abs",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Binary01 => "binary_01",
            LossKind::Logistic => "logistic",
        }
    }

    /// 0-1 loss is evaluation-only.
    pub fn is_differentiable(self) -> bool {
        !matches!(self, LossKind::Binary01)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind {s:?}")))
    }
}

/// Supervision for a batch: class indices, or real-valued targets with the
/// same shape as the predictions.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<S> {
    Classes(Vec<usize>),
    Values(Tensor<S>),
}

impl<S: Scalar> Targets<S> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        match self {
            Targets::Classes(c) => indices
                .iter()
                .map(|&i| {
                    c.get(i)
                        .copied()
                        .ok_or_else(|| Error::shape(format!("target {i} out of range")))
                })
                .collect::<Result<_>>()
                .map(Targets::Classes),
            Targets::Values(t) => t.select_rows(indices).map(Targets::Values),
        }
    }
}

/// Loss of a single scalar prediction `z` against a scalar label `y`.
///
/// Classification losses use labels in `{-1, +1}`; the 0-1 loss predicts `+1`
/// exactly when `z > 0`.
pub fn point_loss<S: Scalar>(kind: LossKind, z: S, y: S) -> Result<S> {
    match kind {
        LossKind::Square => Ok((z - y) * (z - y)),
        LossKind::Abs => Ok((z - y).magnitude()),
        LossKind::Binary01 => {
            let predicted = if z > S::zero() { S::one() } else { S::zero() - S::one() };
            Ok(if predicted == y { S::zero() } else { S::one() })
        }
        LossKind::Logistic => {
            let e = (y * z)
                .try_exp()
                .ok_or_else(|| Error::Unsupported("logistic loss over an exact scalar".into()))?;
            Ok(S::one() / (S::one() + e))
        }
        LossKind::CrossEntropy => Err(Error::Unsupported(
            "cross_entropy needs a class-score vector, not a scalar output".into(),
        )),
    }
}

fn point_grad<S: Real>(kind: LossKind, z: S, y: S) -> Result<S> {
    match kind {
        LossKind::Square => Ok((z - y) * S::narrow(2.0)),
        LossKind::Abs => {
            let d = z - y;
            Ok(if d > S::zero() {
                S::one()
            } else if d < S::zero() {
                -S::one()
            } else {
                S::zero()
            })
        }
        LossKind::Logistic => {
            let s = S::one() / (S::one() + (y * z).exp());
            Ok(-y * s * (S::one() - s))
        }
        LossKind::Binary01 => Err(Error::NotDifferentiable("binary_01")),
        LossKind::CrossEntropy => unreachable!("handled by class-score path"),
    }
}

fn check_classes<S: Scalar>(pred: &Tensor<S>, classes: &[usize]) -> Result<()> {
    if classes.len() != pred.rows() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred.rows(),
            classes.len()
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= pred.cols()) {
        return Err(Error::shape(format!(
            "class {bad} out of range for {} outputs",
            pred.cols()
        )));
    }
    Ok(())
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-row log-softmax and its probabilities.
fn log_softmax<S: Real>(row: &[S]) -> (Vec<f64>, Vec<f64>) {
    let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v.widen() - max).exp()).sum();
    let log_z = max + sum.ln();
    let logp: Vec<f64> = row.iter().map(|v| v.widen() - log_z).collect();
    let p = logp.iter().map(|l| l.exp()).collect();
    (logp, p)
}

pub fn softmax<S: Real>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = Vec::with_capacity(logits.data().len());
    for r in 0..logits.rows() {
        let (_, p) = log_softmax(logits.row(r));
        out.extend(p.into_iter().map(S::narrow));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

fn evaluate<S: Real>(
    pred: &Tensor<S>,
    targets: &Targets<S>,
    kind: LossKind,
    want_grad: bool,
) -> Result<(S, Option<Tensor<S>>)> {
    let rows = pred.rows();
    let width = pred.cols();
    let scale = 1.0 / rows as f64;
    let mut total = 0.0f64;
    let mut grad = want_grad.then(|| vec![S::zero(); pred.data().len()]);

    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(classes)) => {
            check_classes(pred, classes)?;
            if width < 2 {
                return Err(Error::shape("cross_entropy needs at least 2 classes"));
            }
            for (r, &c) in classes.iter().enumerate() {
                let (logp, p) = log_softmax(pred.row(r));
                total -= logp[c];
                if let Some(g) = grad.as_mut() {
                    for (j, pj) in p.iter().enumerate() {
                        let onehot = if j == c { 1.0 } else { 0.0 };
                        g[r * width + j] = S::narrow((pj - onehot) * scale);
                    }
                }
            }
        }
        (LossKind::Binary01, Targets::Classes(classes)) => {
            if want_grad {
                return Err(Error::NotDifferentiable("binary_01"));
            }
            check_classes(pred, classes)?;
            total = classes
                .iter()
                .enumerate()
                .filter(|&(r, &c)| argmax(pred.row(r)) != c)
                .count() as f64;
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::shape("cross_entropy needs class targets"));
        }
        (_, Targets::Classes(_)) => {
            return Err(Error::shape(format!("{kind} needs real-valued targets")));
        }
        (_, Targets::Values(values)) => {
            if values.shape() != pred.shape() {
                return Err(Error::shape(format!(
                    "prediction shape {:?} vs target shape {:?}",
                    pred.shape(),
                    values.shape()
                )));
            }
            if matches!(kind, LossKind::Logistic | LossKind::Binary01) && width != 1 {
                return Err(Error::shape(format!("{kind} needs a single output")));
            }
            let s = S::narrow(scale);
            for (i, (&z, &y)) in pred.data().iter().zip(values.data()).enumerate() {
                total += point_loss(kind, z, y)?.widen();
                if let Some(g) = grad.as_mut() {
                    g[i] = point_grad(kind, z, y)? * s;
                }
            }
        }
    }

    let loss = S::narrow(total * scale);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{kind} loss")));
    }
    let grad = match grad {
        Some(g) => {
            let t = Tensor::new(pred.shape().to_vec(), g)?;
            t.ensure_finite("loss gradient")?;
            Some(t)
        }
        None => None,
    };
    Ok((loss, grad))
}

/// Mean loss over the batch. Per-sample losses sum over output columns.
pub fn loss_eval<S: Real>(pred: &Tensor<S>, targets: &Targets<S>, kind: LossKind) -> Result<S> {
    evaluate(pred, targets, kind, false).map(|(l, _)| l)
}

/// Mean loss together with its gradient with respect to `pred`.
pub fn loss_and_grad<S: Real>(
    pred: &Tensor<S>,
    targets: &Targets<S>,
    kind: LossKind,
) -> Result<(S, Tensor<S>)> {
    if !kind.is_differentiable() {
        return Err(Error::NotDifferentiable("binary_01"));
    }
    let (l, g) = evaluate(pred, targets, kind, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// Fraction of correct predictions: argmax for class targets, sign agreement
/// for single-output `{-1, +1}` targets. `None` for regression targets.
pub fn accuracy<S: Real>(pred: &Tensor<S>, targets: &Targets<S>) -> Option<f64> {
    match targets {
        Targets::Classes(classes) => {
            check_classes(pred, classes).ok()?;
            let hits = classes
                .iter()
                .enumerate()
                .filter(|&(r, &c)| argmax(pred.row(r)) == c)
                .count();
            Some(hits as f64 / classes.len() as f64)
        }
        Targets::Values(values) => {
            if pred.cols() != 1 || values.shape() != pred.shape() {
                return None;
            }
            let binary = values
                .data()
                .iter()
                .all(|&y| y == S::one() || y == -S::one());
            if !binary {
                return None;
            }
            let wrong: f64 = pred
                .data()
                .iter()
                .zip(values.data())
                .map(|(&z, &y)| point_loss(LossKind::Binary01, z, y).map_or(1.0, |l| l.widen()))
                .sum();
            Some(1.0 - wrong / pred.rows() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_batch(z: &[f64], y: &[f64]) -> (Tensor<f64>, Targets<f64>) {
        (
            Tensor::matrix(z.len(), 1, z.to_vec()).unwrap(),
            Targets::Values(Tensor::matrix(y.len(), 1, y.to_vec()).unwrap()),
        )
    }

    #[test]
    fn square_exact_hit_is_zero() {
        let (p, t) = scalar_batch(&[-1.0], &[-1.0]);
        assert_eq!(loss_eval(&p, &t, LossKind::Square).unwrap(), 0.0);
    }

    #[test]
    fn logistic_at_zero_margin_is_half() {
        let (p, t) = scalar_batch(&[0.0], &[1.0]);
        assert_eq!(loss_eval(&p, &t, LossKind::Logistic).unwrap(), 0.5);
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let p = Tensor::<f64>::matrix(1, 2, vec![0.3, 0.3]).unwrap();
        let l = loss_eval(&p, &Targets::Classes(vec![0]), LossKind::CrossEntropy).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn binary_01_has_no_gradient() {
        let (p, t) = scalar_batch(&[1.0], &[1.0]);
        assert!(matches!(
            loss_and_grad(&p, &t, LossKind::Binary01),
            Err(Error::NotDifferentiable(_))
        ));
        assert_eq!(loss_eval(&p, &t, LossKind::Binary01).unwrap(), 0.0);
    }

    #[test]
    fn zero_margin_counts_as_negative_prediction() {
        assert_eq!(point_loss(LossKind::Binary01, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(point_loss(LossKind::Binary01, 0.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn shape_and_kind_mismatches() {
        let p = Tensor::<f64>::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(loss_eval(&p, &Targets::Classes(vec![0]), LossKind::CrossEntropy).is_err());
        assert!(loss_eval(&p, &Targets::Classes(vec![0, 2]), LossKind::CrossEntropy).is_err());
        assert!(loss_eval(&p, &Targets::Classes(vec![0, 1]), LossKind::Square).is_err());
        let v = Targets::Values(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(loss_eval(&p, &v, LossKind::Logistic).is_err());
        assert!("hinge".parse::<LossKind>().is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = Tensor::<f32>::matrix(2, 3, vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let s = softmax(&p);
        for r in 0..2 {
            let sum: f32 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
