//! Keys, digests and permutations.
//!
//! The mapping from a user key to per-layer permutations is fixed bit for bit
//! so that independent implementations agree:
//!
//! * layer 1 digest = SHA-256(key bytes); layer `l + 1` digest = SHA-256(layer `l` digest);
//! * a parameter vector of a layer uses the sub-digest SHA-256(digest ‖ tag)
//!   with tag `0x00` for weights and `0x01` for biases;
//! * the permutation is a Fisher–Yates shuffle of `[0, d)` (for `i = d-1` down
//!   to `1`, swap `i` with `j` uniform in `[0, i]`) driven by a ChaCha20
//!   keystream keyed with the 32-byte digest, zero nonce, block counter 0;
//! * each bounded draw reads little-endian 64-bit words from the keystream and
//!   rejects words `>= 2^64 - (2^64 mod n)` before reducing modulo `n`.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const WEIGHTS_TAG: u8 = 0x00;
pub const BIAS_TAG: u8 = 0x01;
pub const NORM_STATE_TAG: u8 = 0x02;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyDigest(pub [u8; 32]);

impl KeyDigest {
    pub fn of(bytes: &[u8]) -> Self {
        KeyDigest(Sha256::digest(bytes).into())
    }

    /// One application of the layer-transition function.
    pub fn next(&self) -> Self {
        Self::of(&self.0)
    }

    /// SHA-256(digest ‖ tag).
    pub fn tagged(&self, tag: u8) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update([tag]);
        KeyDigest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Parse(format!("digest hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Parse("digest must be 32 bytes".into()))?;
        Ok(KeyDigest(arr))
    }
}

impl fmt::Debug for KeyDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyDigest({})", self.to_hex())
    }
}

/// Digest seeding the `layer`-th parameterized layer (1-based).
pub fn derive_layer_key(user_key: &[u8], layer: usize) -> Result<KeyDigest> {
    if layer == 0 {
        return Err(Error::InvalidArgument("layer index starts at 1".into()));
    }
    let mut d = KeyDigest::of(user_key);
    for _ in 1..layer {
        d = d.next();
    }
    Ok(d)
}

/// All digests for layers `1..=layers`, sharing the hash chain.
pub fn derive_layer_keys(user_key: &[u8], layers: usize) -> Vec<KeyDigest> {
    let mut out = Vec::with_capacity(layers);
    let mut d = KeyDigest::of(user_key);
    for _ in 0..layers {
        out.push(d);
        d = d.next();
    }
    out
}

/// A bijection on `0..d`, read as `out[i] = v[perm[i]]` when applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            if i >= indices.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation(format!(
                    "{i} is out of range or repeated in a permutation of length {}",
                    indices.len()
                )));
            }
        }
        Ok(Permutation(indices))
    }

    pub fn identity(d: usize) -> Self {
        Permutation((0..d).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Permutation(inv)
    }

    pub fn apply<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.0.len() {
            return Err(Error::shape(format!(
                "vector of length {} for permutation of length {}",
                v.len(),
                self.0.len()
            )));
        }
        Ok(self.0.iter().map(|&p| v[p]).collect())
    }

    /// `dst[perm[i]] += src[i]`, i.e. adds `apply(src, inverse)` into `dst`.
    pub fn scatter_add<T: Copy + std::ops::Add<Output = T>>(&self, src: &[T], dst: &mut [T]) -> Result<()> {
        if src.len() != self.0.len() || dst.len() != self.0.len() {
            return Err(Error::shape("scatter length mismatch"));
        }
        for (&p, &s) in self.0.iter().zip(src) {
            dst[p] = dst[p] + s;
        }
        Ok(())
    }
}

pub fn apply_permutation<T: Copy>(v: &[T], perm: &Permutation) -> Result<Vec<T>> {
    perm.apply(v)
}

/// Validates `indices` as a bijection and returns its inverse.
pub fn invert_permutation(indices: &[usize]) -> Result<Permutation> {
    Ok(Permutation::new(indices.to_vec())?.inverse())
}

/// Uniform integer in `[0, n)` by rejection on 64-bit keystream words.
fn uniform_below(rng: &mut ChaCha20Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    // 2^64 mod n
    let rem = (u64::MAX % n + 1) % n;
    let limit = u64::MAX - rem;
    loop {
        let x = rng.next_u64();
        if rem == 0 || x <= limit {
            return x % n;
        }
    }
}

pub fn generate_permutation(digest: &KeyDigest, d: usize) -> Result<Permutation> {
    if d == 0 {
        return Err(Error::InvalidArgument("cannot permute an empty vector".into()));
    }
    let mut rng = ChaCha20Rng::from_seed(digest.0);
    let mut p: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        p.swap(i, j);
    }
    Ok(Permutation(p))
}

/// `log10(d!)`: exact summation for small `d`, Stirling's series otherwise.
pub fn permutation_space_log10(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if d < 32 {
        return Ok((2..=d).map(|k| (k as f64).log10()).sum());
    }
    let n = d as f64;
    let ln_fact = n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
        - 1.0 / (360.0 * n.powi(3))
        + 1.0 / (1260.0 * n.powi(5))
        - 1.0 / (1680.0 * n.powi(7));
    Ok(ln_fact / std::f64::consts::LN_10)
}
