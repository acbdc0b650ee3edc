//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        b"TRJN"
//! version      u16
//! seed         u64
//! config_hash  [u8; 32]
//! layers       u32, then per layer a u8 tag:
//!                0 dense       u32 inputs, u32 outputs
//!                1 activation  u8 (0 relu, 1 identity)
//!                2 group norm  u32 channels, u32 groups
//! params       u64 count, then f32 values layer by layer
//!              (dense: weights then bias; group norm: gain then bias)
//! norm blocks  u32 count, then per block a 32-byte id followed by
//!              gain and bias of every group-norm layer
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::keyspace::KeyDigest;
use crate::nn::{Activation, Dense, GroupNorm, Layer, Network};
use crate::trojan::{NormState, NormStateId, NormStates};

pub const MAGIC: [u8; 4] = *b"TRJN";
pub const FORMAT_VERSION: u16 = 1;

const TAG_DENSE: u8 = 0;
const TAG_ACTIVATION: u8 = 1;
const TAG_GROUP_NORM: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub norm_states: NormStates<f32>,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn new(network: Network<f32>, norm_states: NormStates<f32>) -> Self {
        Self {
            network,
            norm_states,
            seed: 0,
            config_hash: [0; 32],
        }
    }

    /// Number of stored per-key normalization blocks. Visible to anyone
    /// holding the file.
    pub fn key_state_count(&self) -> usize {
        self.norm_states.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        let layers = self.network.layers();
        out.extend_from_slice(&u32_of(layers.len())?.to_le_bytes());
        for layer in layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(TAG_DENSE);
                    out.extend_from_slice(&u32_of(d.inputs)?.to_le_bytes());
                    out.extend_from_slice(&u32_of(d.outputs)?.to_le_bytes());
                }
                Layer::Activation(a) => {
                    out.push(TAG_ACTIVATION);
                    out.push(match a {
                        Activation::Relu => 0,
                        Activation::Identity => 1,
                    });
                }
                Layer::GroupNorm(g) => {
                    out.push(TAG_GROUP_NORM);
                    out.extend_from_slice(&u32_of(g.channels)?.to_le_bytes());
                    out.extend_from_slice(&u32_of(g.groups)?.to_le_bytes());
                }
            }
        }
        let params = self.network.params();
        let count: usize = params.iter().map(|p| p.len()).sum();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for v in params.into_iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&u32_of(self.norm_states.len())?.to_le_bytes());
        for (id, state) in self.norm_states.iter() {
            if !state.matches(&self.network) {
                return Err(Error::shape(format!("normalization block {id} does not fit the network")));
            }
            out.extend_from_slice(id.0.as_bytes());
            for v in state.vectors().into_iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let seed = u64::from_le_bytes(r.array("seed")?);
        let config_hash: [u8; 32] = r.array("config hash")?;
        let layer_count = r.u32("layer count")? as usize;
        if layer_count > r.remaining() {
            return Err(Error::Truncated(format!("{layer_count} layer descriptors announced")));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for i in 0..layer_count {
            let tag = r.array::<1>("layer tag")?[0];
            layers.push(match tag {
                TAG_DENSE => {
                    let (inputs, outputs) = (r.u32("dense inputs")? as usize, r.u32("dense outputs")? as usize);
                    let n = inputs
                        .checked_mul(outputs)
                        .ok_or_else(|| Error::Malformed(format!("layer {i}: dense size overflows")))?;
                    if n > r.remaining() {
                        return Err(Error::Truncated(format!("layer {i} announces {n} weights")));
                    }
                    Layer::Dense(Dense::new(inputs, outputs, vec![0.0; n], vec![0.0; outputs]).map_err(malformed(i))?)
                }
                TAG_ACTIVATION => Layer::Activation(match r.array::<1>("activation")?[0] {
                    0 => Activation::Relu,
                    1 => Activation::Identity,
                    other => return Err(Error::Malformed(format!("layer {i}: activation code {other}"))),
                }),
                TAG_GROUP_NORM => {
                    let (c, g) = (r.u32("norm channels")? as usize, r.u32("norm groups")? as usize);
                    if c > r.remaining() {
                        return Err(Error::Truncated(format!("layer {i} announces {c} channels")));
                    }
                    Layer::GroupNorm(GroupNorm::new(c, g).map_err(malformed(i))?)
                }
                other => return Err(Error::Malformed(format!("layer {i}: unknown layer tag {other}"))),
            });
        }
        let mut network = Network::new(layers).map_err(|e| Error::Malformed(e.to_string()))?;
        let count = u64::from_le_bytes(r.array("parameter count")?);
        if count != network.param_count() as u64 {
            return Err(Error::Malformed(format!(
                "{count} parameters stored, descriptors need {}",
                network.param_count()
            )));
        }
        for p in network.params_mut() {
            r.fill(p, "parameters")?;
        }
        let blocks = r.u32("norm block count")? as usize;
        let template = NormState::from_network(&network);
        let mut norm_states = NormStates::new();
        for b in 0..blocks {
            let id = NormStateId(KeyDigest(r.array("norm block id")?));
            let mut state = template.zeros_like();
            for v in state.vectors_mut() {
                r.fill(v, "norm block")?;
            }
            if norm_states.get(&id).is_some() {
                return Err(Error::Malformed(format!("norm block {b} repeats id {id}")));
            }
            norm_states.insert(id, state);
        }
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            network,
            norm_states,
            seed,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(net: &Network<f32>, norm_states: &NormStates<f32>, path: &Path) -> Result<()> {
    Checkpoint::new(net.clone(), norm_states.clone()).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the checkpoint format")))
}

fn malformed(layer: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Malformed(format!("layer {layer}: {e}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Truncated(format!("file ends inside {what}")))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn fill(&mut self, dst: &mut [f32], what: &str) -> Result<()> {
        if dst.len() * 4 > self.remaining() {
            return Err(Error::Truncated(format!("file ends inside {what}")));
        }
        for v in dst {
            *v = f32::from_le_bytes(self.array(what)?);
        }
        Ok(())
    }
}
