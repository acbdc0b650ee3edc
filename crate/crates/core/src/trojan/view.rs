use std::borrow::Cow;

use super::schedule::{KeySchedule, NormState};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Network, Tensor};
use crate::scalar::Real;

/// A carrier read through a key's permutations. The view borrows the
/// carrier; parameters are only gathered when a forward pass or
/// [`materialize`](Self::materialize) needs them.
#[derive(Debug, Clone)]
pub struct PermutedView<'a, S> {
    carrier: &'a Network<S>,
    schedule: Option<Cow<'a, KeySchedule>>,
    norm: Option<&'a NormState<S>>,
}

/// View of `carrier` under `key`; `None` is the carrier itself.
pub fn permuted_view<'a, S: Real>(carrier: &'a Network<S>, key: Option<&[u8]>) -> Result<PermutedView<'a, S>> {
    let schedule = key.map(|k| KeySchedule::new(carrier, k)).transpose()?;
    Ok(PermutedView {
        carrier,
        schedule: schedule.map(Cow::Owned),
        norm: None,
    })
}

impl<'a, S: Real> PermutedView<'a, S> {
    pub fn with_schedule(carrier: &'a Network<S>, schedule: Option<&'a KeySchedule>) -> Result<Self> {
        if let Some(s) = schedule {
            if s.permutations().len() != carrier.param_specs().len() {
                return Err(Error::shape("key schedule built for another architecture"));
            }
        }
        Ok(Self {
            carrier,
            schedule: schedule.map(Cow::Borrowed),
            norm: None,
        })
    }

    /// Uses a key-specific normalization state instead of the carrier's.
    pub fn with_norm_state(mut self, norm: Option<&'a NormState<S>>) -> Result<Self> {
        if let Some(n) = norm {
            if !n.matches(self.carrier) {
                return Err(Error::shape("normalization state does not fit the carrier"));
            }
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn carrier(&self) -> &Network<S> {
        self.carrier
    }

    pub fn schedule(&self) -> Option<&KeySchedule> {
        self.schedule.as_deref()
    }

    pub fn is_carrier(&self) -> bool {
        self.schedule.is_none() && self.norm.is_none()
    }

    /// The `k`-th parameter vector as seen through the view.
    pub fn param(&self, k: usize) -> Result<Vec<S>> {
        let src = self
            .carrier
            .params()
            .get(k)
            .map(|v| v.to_vec())
            .ok_or_else(|| Error::shape(format!("no parameter vector {k}")))?;
        match self.schedule.as_ref().and_then(|s| s.permutations()[k].as_ref()) {
            Some(p) => p.apply(&src),
            None => Ok(src),
        }
    }

    pub fn materialize(&self) -> Result<Network<S>> {
        let mut net = self.carrier.clone();
        if let Some(schedule) = &self.schedule {
            let src = self.carrier.params();
            for ((dst, perm), src) in net.params_mut().into_iter().zip(schedule.permutations()).zip(src) {
                if let Some(p) = perm {
                    for (d, &i) in dst.iter_mut().zip(p.as_slice()) {
                        *d = src[i];
                    }
                }
            }
        }
        if let Some(norm) = self.norm {
            norm.install(&mut net)?;
        }
        Ok(net)
    }

    pub fn forward(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        self.materialize()?.forward(batch)
    }

    /// Routes gradients computed on the materialized view back to storage:
    /// permuted vectors are scattered through the inverse permutation into
    /// `carrier`, and norm vectors go to `norm` when the view has its own
    /// normalization state.
    pub fn accumulate_gradient(
        &self,
        view_grads: &Gradients<S>,
        carrier: &mut Gradients<S>,
        mut norm: Option<&mut NormState<S>>,
    ) -> Result<()> {
        let specs = self.carrier.param_specs();
        if view_grads.vectors.len() != specs.len() || carrier.vectors.len() != specs.len() {
            return Err(Error::shape("gradient layout does not match the carrier"));
        }
        let mut norm_slot = 0;
        for (k, spec) in specs.iter().enumerate() {
            let g = &view_grads.vectors[k];
            if spec.role.is_norm() && self.norm.is_some() {
                let dst = norm
                    .as_deref_mut()
                    .ok_or_else(|| Error::shape("view has its own norm state; a norm gradient buffer is required"))?;
                let mut vectors = dst.vectors_mut();
                for (d, &s) in vectors[norm_slot].iter_mut().zip(g) {
                    *d = *d + s;
                }
                norm_slot += 1;
                continue;
            }
            match self.schedule.as_ref().and_then(|s| s.permutations()[k].as_ref()) {
                Some(p) => p.scatter_add(g, &mut carrier.vectors[k])?,
                None => {
                    for (d, &s) in carrier.vectors[k].iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
            }
        }
        Ok(())
    }
}
