use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::nn::{LossKind, Network};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDecision {
    /// `loss < threshold`.
    pub detected: bool,
    pub loss: f64,
}

/// The inspector's test: does `net` reach a mean loss strictly below
/// `threshold` on `data`?
pub fn threshold_test<S: Real>(
    net: &Network<S>,
    data: &Dataset<S>,
    kind: LossKind,
    threshold: f64,
) -> Result<ThresholdDecision> {
    if threshold.is_nan() {
        return Err(Error::InvalidArgument("threshold is NaN".into()));
    }
    let loss = data.evaluate(net, kind)?.loss;
    Ok(ThresholdDecision {
        detected: loss < threshold,
        loss,
    })
}
