//! Min-cost matching attack: rearrange a benign network's parameters to
//! mimic a secret network, producing a permutation that passes the
//! threshold test without any hidden network being present.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Dataset, Evaluation};
use crate::keyspace::Permutation;
use crate::nn::{Layer, LossKind, Network, ParamRole};
use crate::scalar::Real;

pub const DEFAULT_DECIMALS: u32 = 2;
const MAX_DECIMALS: u32 = 12;

/// A permutation of the public vector together with its quantized cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub permutation: Permutation,
    /// Sum of absolute differences in units of `10^-decimals`.
    pub cost_units: u64,
    pub decimals: u32,
}

impl Matching {
    pub fn cost(&self) -> f64 {
        self.cost_units as f64 / 10f64.powi(self.decimals as i32)
    }
}

pub fn quantize(value: f64, decimals: u32) -> i64 {
    (value * 10f64.powi(decimals as i32)).round() as i64
}

/// Quantized cost of pairing `public[perm[i]]` with `secret[i]`.
pub fn matching_cost<S: Real>(public: &[S], secret: &[S], perm: &[usize], decimals: u32) -> Result<u64> {
    if public.len() != secret.len() || perm.len() != secret.len() {
        return Err(Error::shape("matching vectors and permutation differ in length"));
    }
    Ok(perm
        .iter()
        .zip(secret)
        .map(|(&p, s)| quantize(public[p].widen(), decimals).abs_diff(quantize(s.widen(), decimals)))
        .sum())
}

fn rank_order<S: Real>(v: &[S], decimals: u32) -> Vec<usize> {
    let keys: Vec<i64> = v.iter().map(|x| quantize(x.widen(), decimals)).collect();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

/// Pairs the k-th smallest rounded public value with the k-th smallest
/// rounded secret value. Returns `π` such that `public[π[i]]` sits in secret
/// slot `i`; the full-precision public values are what gets moved.
pub fn mincost_match<S: Real>(public: &[S], secret: &[S], decimals: u32) -> Result<Matching> {
    if public.len() != secret.len() {
        return Err(Error::shape(format!(
            "cannot match {} public values against {} secret values",
            public.len(),
            secret.len()
        )));
    }
    if decimals > MAX_DECIMALS {
        return Err(Error::InvalidArgument(format!("decimals must be at most {MAX_DECIMALS}")));
    }
    if !public.iter().chain(secret).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matching input".into()));
    }
    let pub_order = rank_order(public, decimals);
    let sec_order = rank_order(secret, decimals);
    let mut perm = vec![0; secret.len()];
    for (&s, &p) in sec_order.iter().zip(&pub_order) {
        perm[s] = p;
    }
    let cost_units = matching_cost(public, secret, &perm, decimals)?;
    Ok(Matching {
        permutation: Permutation::new(perm)?,
        cost_units,
        decimals,
    })
}

#[derive(Debug, Clone)]
pub struct MatchResult<S> {
    /// One permutation per dense parameter vector, in parameter order.
    /// Normalization vectors are copied from the secret network and get none.
    pub permutations: Vec<Option<Permutation>>,
    pub cost: f64,
    pub network: Network<S>,
    pub evaluation: Evaluation,
}

impl<S> MatchResult<S> {
    pub fn accuracy(&self) -> Option<f64> {
        self.evaluation.accuracy
    }
}

fn same_architecture<S: Real>(a: &Network<S>, b: &Network<S>) -> bool {
    a.layers().len() == b.layers().len()
        && a.layers().iter().zip(b.layers()).all(|(x, y)| match (x, y) {
            (Layer::Dense(p), Layer::Dense(q)) => p.inputs == q.inputs && p.outputs == q.outputs,
            (Layer::GroupNorm(p), Layer::GroupNorm(q)) => p.channels == q.channels && p.groups == q.groups,
            (Layer::Activation(p), Layer::Activation(q)) => p == q,
            _ => false,
        })
}

/// Builds the matched network only, without evaluating it.
pub fn matching_attack<S: Real>(
    public_net: &Network<S>,
    secret_net: &Network<S>,
    decimals: u32,
) -> Result<(Network<S>, Vec<Option<Permutation>>, f64)> {
    if !same_architecture(public_net, secret_net) {
        return Err(Error::shape("public and secret networks have different architectures"));
    }
    let specs = secret_net.param_specs();
    let public = public_net.params();
    let mut assembled = secret_net.clone();
    let mut perms = Vec::with_capacity(specs.len());
    let mut cost = 0.0;
    for ((spec, target), source) in specs.iter().zip(assembled.params_mut()).zip(public) {
        if matches!(spec.role, ParamRole::NormGain | ParamRole::NormBias) {
            perms.push(None);
            continue;
        }
        let m = mincost_match(source, target, decimals)?;
        for (slot, &p) in target.iter_mut().zip(m.permutation.as_slice()) {
            *slot = source[p];
        }
        cost += m.cost();
        perms.push(Some(m.permutation));
    }
    Ok((assembled, perms, cost))
}

pub fn matching_attack_eval<S: Real>(
    public_net: &Network<S>,
    secret_net: &Network<S>,
    data: &Dataset<S>,
    kind: LossKind,
) -> Result<MatchResult<S>> {
    let (network, permutations, cost) = matching_attack(public_net, secret_net, DEFAULT_DECIMALS)?;
    let evaluation = data.evaluate(&network, kind)?;
    Ok(MatchResult {
        permutations,
        cost,
        network,
        evaluation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub fp_rate: f64,
    pub n: usize,
}

/// For each threshold, the fraction of benign networks whose matched loss on
/// the secret task falls strictly below it.
pub fn false_positive_sweep<S: Real>(
    public_nets: &[Network<S>],
    secret_net: &Network<S>,
    data: &Dataset<S>,
    kind: LossKind,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    let losses = public_nets
        .iter()
        .map(|net| matching_attack_eval(net, secret_net, data, kind).map(|r| r.evaluation.loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep_rows(&losses, thresholds))
}

pub fn sweep_rows(losses: &[f64], thresholds: &[f64]) -> Vec<SweepRow> {
    let n = losses.len();
    thresholds
        .iter()
        .map(|&threshold| {
            let hits = losses.iter().filter(|&&l| l < threshold).count();
            SweepRow {
                threshold,
                fp_rate: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
                n,
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,fp_rate,n\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.threshold, r.fp_rate, r.n));
    }
    out
}
