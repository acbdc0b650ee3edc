use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{text, ReductionArtifacts};
use crate::detection::{first_satisfying, worker_threads, ExistsPermInstance};
use crate::error::{Error, Result};
use crate::keyspace::Permutation;
use crate::nn::LossKind;
use crate::scalar::Scalar;

pub const MAX_CYCLIC_ELEMENTS: usize = 9;

/// Cyclic ordering over elements `1..=n`: find positions `π` such that every
/// triple `(a, b, c)` appears in cyclic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicOrdering {
    n: usize,
    triples: Vec<[usize; 3]>,
}

impl CyclicOrdering {
    pub fn new(n: usize, triples: Vec<[usize; 3]>) -> Result<Self> {
        for (i, t) in triples.iter().enumerate() {
            if t.iter().any(|&e| e == 0 || e > n) {
                return Err(Error::InvalidArgument(format!("triple {}: element outside 1..={n}", i + 1)));
            }
            if t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
                return Err(Error::InvalidArgument(format!("triple {}: members must be distinct", i + 1)));
            }
        }
        Ok(Self { n, triples })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = text::parse(text)?;
        let triples = raw
            .rows
            .iter()
            .map(|r| {
                let mut t = [0usize; 3];
                for (slot, &v) in t.iter_mut().zip(r) {
                    *slot = usize::try_from(v)
                        .map_err(|_| Error::Parse(format!("negative element {v} in a triple")))?;
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(raw.n, triples)
    }

    pub fn to_text(&self) -> String {
        text::render(self.n, self.triples.iter().map(|t| t.map(|e| e as i64)))
    }

    pub fn elements(&self) -> usize {
        self.n
    }

    pub fn triples(&self) -> &[[usize; 3]] {
        &self.triples
    }

    /// `positions[e-1]` is the position of element `e`.
    pub fn is_satisfied_by(&self, positions: &[usize]) -> bool {
        positions.len() == self.n && self.triples.iter().all(|t| triple_in_cyclic_order(t, positions))
    }

    /// Random instance with `m` triples of distinct members. Needs `n ≥ 3`.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument("a triple needs n >= 3".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples = (0..m)
            .map(|_| {
                let s = sample(&mut rng, n, 3);
                [s.index(0) + 1, s.index(1) + 1, s.index(2) + 1]
            })
            .collect();
        Self::new(n, triples)
    }
}

fn triple_in_cyclic_order(&[a, b, c]: &[usize; 3], pos: &[usize]) -> bool {
    let (pa, pb, pc) = (pos[a - 1], pos[b - 1], pos[c - 1]);
    (pa < pb && pb < pc) || (pb < pc && pc < pa) || (pc < pa && pa < pb)
}

/// Lexicographically first satisfying position map.
pub fn solve_cyclic_bruteforce(inst: &CyclicOrdering) -> Result<Option<Permutation>> {
    if inst.n > MAX_CYCLIC_ELEMENTS {
        return Err(Error::TooLarge {
            what: "elements",
            value: inst.n,
            limit: MAX_CYCLIC_ELEMENTS,
        });
    }
    first_satisfying(inst.n, worker_threads(), |p| Ok(inst.is_satisfied_by(p)))?
        .map(Permutation::new)
        .transpose()
}

/// Default `ε = 1/(2m)`.
pub fn default_epsilon(m: usize) -> f64 {
    1.0 / (2 * m) as f64
}

/// Logistic regression instance with `w = (1, …, n)`. Each triple yields
/// three points with `−z` at one member and `+z` at its cyclic successor,
/// all labelled `1`; the threshold is `(m+1)/(3m)`. For binary loss `z = 1`;
/// for logistic loss `z = ln((1−ε)/ε)`, so a correctly ordered pair at unit
/// distance costs exactly `ε`.
pub fn reduce_cyclic<S: Scalar>(inst: &CyclicOrdering, loss: LossKind, epsilon: Option<f64>) -> Result<ReductionArtifacts<S>> {
    let (n, m) = (inst.n, inst.triples.len());
    if m == 0 {
        return Err(Error::InvalidArgument("no triples to turn into datapoints".into()));
    }
    let (z, eps) = match loss {
        LossKind::Binary01 => {
            if epsilon.is_some() {
                return Err(Error::InvalidArgument("epsilon only applies to the logistic reduction".into()));
            }
            (S::one(), None)
        }
        LossKind::Logistic => {
            let eps = epsilon.unwrap_or_else(|| default_epsilon(m));
            if !(eps > 0.0 && eps < 1.0 / m as f64) {
                return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1/{m}), got {eps}")));
            }
            let z = ((1.0 - eps) / eps).ln();
            let zs = S::from_f64(z).ok_or_else(|| Error::InvalidArgument(format!("z = {z} is not representable")))?;
            (zs, Some(eps))
        }
        other => {
            return Err(Error::Unsupported(format!(
                "cyclic ordering reduces to binary_01 or logistic loss, not {other}"
            )))
        }
    };
    let weights = (1..=n).map(S::from_count).collect();
    let mut inputs = Vec::with_capacity(3 * m);
    for &[a, b, c] in &inst.triples {
        for (neg, pos) in [(a, b), (b, c), (c, a)] {
            let mut x = vec![S::zero(); n];
            x[neg - 1] = S::zero() - z;
            x[pos - 1] = z;
            inputs.push(x);
        }
    }
    let threshold = S::from_count(m + 1) / S::from_count(3 * m);
    Ok(ReductionArtifacts {
        instance: ExistsPermInstance::new(weights, inputs, vec![S::one(); 3 * m], loss, threshold)?,
        k: None,
        epsilon: eps,
        z: eps.map(|e| ((1.0 - e) / e).ln()),
    })
}

/// Mean loss of each triple's three datapoints under `perm`, for a
/// cyclic-ordering reduction.
pub fn per_triple_losses<S: Scalar>(inst: &ExistsPermInstance<S>, perm: &[usize]) -> Result<Vec<S>> {
    if inst.inputs.len() % 3 != 0 {
        return Err(Error::shape("datapoints do not come in triples"));
    }
    inst.inputs
        .chunks(3)
        .zip(inst.targets.chunks(3))
        .map(|(xs, ys)| {
            let sub = ExistsPermInstance::new(inst.weights.clone(), xs.to_vec(), ys.to_vec(), inst.loss, inst.threshold)?;
            sub.loss_of(perm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::brute_force_exists_perm;
    use num_rational::Rational64;

    #[test]
    fn validation_and_parse() {
        assert!(CyclicOrdering::new(3, vec![[1, 1, 2]]).is_err());
        assert!(CyclicOrdering::new(3, vec![[1, 2, 4]]).is_err());
        assert!(CyclicOrdering::parse("3 1\n1 -2 3\n").is_err());
        let inst = CyclicOrdering::new(4, vec![[1, 2, 3], [4, 2, 1]]).unwrap();
        assert_eq!(CyclicOrdering::parse(&inst.to_text()).unwrap(), inst);
    }

    #[test]
    fn solver_examples() {
        let one = CyclicOrdering::new(3, vec![[1, 2, 3]]).unwrap();
        assert!(solve_cyclic_bruteforce(&one).unwrap().unwrap().is_identity());
        let both = CyclicOrdering::new(3, vec![[1, 2, 3], [1, 3, 2]]).unwrap();
        assert_eq!(solve_cyclic_bruteforce(&both).unwrap(), None);
        let empty = CyclicOrdering::new(5, vec![]).unwrap();
        assert!(solve_cyclic_bruteforce(&empty).unwrap().unwrap().is_identity());
        assert!(solve_cyclic_bruteforce(&CyclicOrdering::new(10, vec![]).unwrap()).is_err());
    }

    #[test]
    fn binary_single_triple() {
        let inst = CyclicOrdering::new(3, vec![[1, 2, 3]]).unwrap();
        let art = reduce_cyclic::<Rational64>(&inst, LossKind::Binary01, None).unwrap();
        assert_eq!(art.instance.threshold, Rational64::new(2, 3));
        assert_eq!(art.instance.loss_of(&[0, 1, 2]).unwrap(), Rational64::new(1, 3));
        assert!(brute_force_exists_perm(&art.instance).unwrap().is_some());
    }

    #[test]
    fn epsilon_bounds() {
        let inst = CyclicOrdering::new(3, vec![[1, 2, 3]]).unwrap();
        assert!(reduce_cyclic::<f64>(&inst, LossKind::Logistic, Some(0.5)).is_ok());
        assert!(reduce_cyclic::<f64>(&inst, LossKind::Logistic, Some(1.0)).is_err());
        assert!(reduce_cyclic::<f64>(&inst, LossKind::Logistic, Some(0.0)).is_err());
        let two = CyclicOrdering::new(3, vec![[1, 2, 3], [2, 3, 1]]).unwrap();
        assert!(reduce_cyclic::<f64>(&two, LossKind::Logistic, Some(0.5)).is_err());
        let art = reduce_cyclic::<f64>(&two, LossKind::Logistic, None).unwrap();
        assert_eq!(art.epsilon, Some(0.25));
        assert!((art.z.unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(reduce_cyclic::<f64>(&two, LossKind::Binary01, Some(0.25)).is_err());
    }

    #[test]
    fn logistic_unit_margin_costs_epsilon() {
        let inst = CyclicOrdering::new(3, vec![[1, 2, 3], [2, 1, 3]]).unwrap();
        let art = reduce_cyclic::<f64>(&inst, LossKind::Logistic, None).unwrap();
        let eps = art.epsilon.unwrap();
        // identity: (1,2) has margin +z, so the first datapoint costs ε.
        let single = ExistsPermInstance::new(art.instance.weights.clone(), vec![art.instance.inputs[0].clone()], vec![1.0], LossKind::Logistic, 1.0).unwrap();
        assert!((single.loss_of(&[0, 1, 2]).unwrap() - eps).abs() < 1e-12);
    }
}

/// Logistic permutation search on the reduced instance without rounding.
/// With `w = (1, …, n)` every margin is `z·k` for an integer `k`, so each
/// point loss is `1/(1 + r^k)` with `r = (1−ε)/ε` and the whole comparison
/// against `L` runs in big rationals. Returns the lexicographically first
/// accepting permutation, as [`crate::detection::brute_force_exists_perm`]
/// would on exact inputs.
pub fn exact_logistic_search(inst: &CyclicOrdering, epsilon: Option<f64>) -> Result<Option<Permutation>> {
    let (n, m) = (inst.n, inst.triples.len());
    if n > MAX_CYCLIC_ELEMENTS {
        return Err(Error::TooLarge {
            what: "elements",
            value: n,
            limit: MAX_CYCLIC_ELEMENTS,
        });
    }
    // Validates epsilon and m exactly as the floating-point reduction does.
    reduce_cyclic::<f64>(inst, LossKind::Logistic, epsilon)?;
    let eps = match epsilon {
        Some(e) => BigRational::from_float(e).ok_or_else(|| Error::InvalidArgument(format!("epsilon {e} is not finite")))?,
        None => BigRational::new(1.into(), (2 * m as i64).into()),
    };
    let r = (BigRational::one() - &eps) / &eps;
    let span = n as i32;
    // loss[k + span] = 1 / (1 + r^k) for k in -span..=span.
    let table: Vec<BigRational> = (-span..=span).map(|k| (BigRational::one() + r.pow(k)).recip()).collect();
    // Sum over all 3m points against 3m·L = m + 1.
    let threshold = BigRational::from_integer(((m + 1) as i64).into());
    let found = first_satisfying(n, worker_threads(), |perm| {
        let mut total = BigRational::zero();
        for &[a, b, c] in &inst.triples {
            for (neg, pos) in [(a, b), (b, c), (c, a)] {
                let k = perm[pos - 1] as i32 - perm[neg - 1] as i32;
                total += &table[(k + span) as usize];
            }
        }
        Ok(total < threshold)
    })?;
    found.map(Permutation::new).transpose()
}
