use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::keyspace::{derive_layer_keys, generate_permutation, KeyDigest, Permutation, BIAS_TAG, NORM_STATE_TAG, WEIGHTS_TAG};
use crate::nn::{Network, ParamRole, ParamSpec};
use crate::scalar::Real;

/// Identifier under which a key's normalization state is stored. Derived
/// from the key digest, so checkpoints never contain the key itself.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormStateId(pub KeyDigest);

impl NormStateId {
    pub fn for_key(key: &[u8]) -> Self {
        NormStateId(KeyDigest::of(key).tagged(NORM_STATE_TAG))
    }
}

impl fmt::Debug for NormStateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NormStateId({})", self.0.to_hex())
    }
}

impl fmt::Display for NormStateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

/// Per-parameter-vector permutations for one key over one architecture.
/// Group-norm affine vectors are not permuted (`None`).
#[derive(Debug, Clone, PartialEq)]
pub struct KeySchedule {
    perms: Vec<Option<Permutation>>,
    norm_id: NormStateId,
}

impl KeySchedule {
    pub fn new<S: Real>(net: &Network<S>, key: &[u8]) -> Result<Self> {
        Self::for_specs(&net.param_specs(), key)
    }

    pub fn for_specs(specs: &[ParamSpec], key: &[u8]) -> Result<Self> {
        if key.is_empty() {
            return Err(Error::InvalidArgument("key must be non-empty".into()));
        }
        let layers = specs.iter().map(|s| s.ordinal).max().unwrap_or(0);
        let digests = derive_layer_keys(key, layers);
        let perms = specs
            .iter()
            .map(|s| {
                let digest = &digests[s.ordinal - 1];
                match s.role {
                    ParamRole::Weights => generate_permutation(&digest.tagged(WEIGHTS_TAG), s.len).map(Some),
                    ParamRole::Bias => generate_permutation(&digest.tagged(BIAS_TAG), s.len).map(Some),
                    ParamRole::NormGain | ParamRole::NormBias => Ok(None),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            perms,
            norm_id: NormStateId::for_key(key),
        })
    }

    pub fn permutations(&self) -> &[Option<Permutation>] {
        &self.perms
    }

    pub fn norm_id(&self) -> NormStateId {
        self.norm_id
    }
}

/// Group-norm affine parameters for one key, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState<S> {
    pub layers: Vec<(Vec<S>, Vec<S>)>,
}

impl<S: Real> NormState<S> {
    pub fn from_network(net: &Network<S>) -> Self {
        Self {
            layers: net
                .norm_params()
                .into_iter()
                .map(|(g, b)| (g.to_vec(), b.to_vec()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|(g, b)| (vec![S::zero(); g.len()], vec![S::zero(); b.len()]))
                .collect(),
        }
    }

    pub fn matches(&self, net: &Network<S>) -> bool {
        let p = net.norm_params();
        p.len() == self.layers.len()
            && p.iter()
                .zip(&self.layers)
                .all(|((g, b), (sg, sb))| g.len() == sg.len() && b.len() == sb.len())
    }

    pub fn install(&self, net: &mut Network<S>) -> Result<()> {
        if !self.matches(net) {
            return Err(Error::shape("normalization state does not fit the network"));
        }
        for ((g, b), (sg, sb)) in net.norm_params_mut().into_iter().zip(&self.layers) {
            g.clone_from(sg);
            b.clone_from(sb);
        }
        Ok(())
    }

    pub fn vectors_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|(g, b)| [g.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn vectors(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .flat_map(|(g, b)| [g.as_slice(), b.as_slice()])
            .collect()
    }
}

/// Normalization states keyed by [`NormStateId`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStates<S> {
    states: BTreeMap<NormStateId, NormState<S>>,
}

impl<S> Default for NormStates<S> {
    fn default() -> Self {
        Self {
            states: BTreeMap::new(),
        }
    }
}

impl<S: Real> NormStates<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NormStateId, state: NormState<S>) {
        self.states.insert(id, state);
    }

    pub fn get(&self, id: &NormStateId) -> Option<&NormState<S>> {
        self.states.get(id)
    }

    pub fn for_key(&self, key: &[u8]) -> Option<&NormState<S>> {
        self.get(&NormStateId::for_key(key))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NormStateId, &NormState<S>)> {
        self.states.iter()
    }
}
