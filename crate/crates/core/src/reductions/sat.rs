use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{text, ReductionArtifacts};
use crate::detection::ExistsPermInstance;
use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::scalar::Scalar;

pub const MAX_SAT_VARIABLES: usize = 20;

/// A literal over variables `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal {
    pub var: usize,
    pub negated: bool,
}

impl Literal {
    pub fn from_signed(v: i64) -> Result<Self> {
        if v == 0 {
            return Err(Error::InvalidArgument("literal 0 is not a variable".into()));
        }
        Ok(Literal {
            var: v.unsigned_abs() as usize,
            negated: v < 0,
        })
    }

    pub fn to_signed(self) -> i64 {
        if self.negated {
            -(self.var as i64)
        } else {
            self.var as i64
        }
    }

    pub fn eval(self, assignment: &[bool]) -> bool {
        assignment[self.var - 1] != self.negated
    }
}

/// 1-in-3 SAT: every clause must have exactly one true literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneInThreeSat {
    n: usize,
    clauses: Vec<[Literal; 3]>,
}

impl OneInThreeSat {
    /// Clauses must name three distinct variables in `1..=n`.
    pub fn new(n: usize, clauses: Vec<[Literal; 3]>) -> Result<Self> {
        for (i, c) in clauses.iter().enumerate() {
            if let Some(l) = c.iter().find(|l| l.var == 0 || l.var > n) {
                return Err(Error::InvalidArgument(format!(
                    "clause {}: variable {} outside 1..={n}",
                    i + 1,
                    l.var
                )));
            }
            if c[0].var == c[1].var || c[0].var == c[2].var || c[1].var == c[2].var {
                return Err(Error::InvalidArgument(format!(
                    "clause {}: a variable appears more than once",
                    i + 1
                )));
            }
        }
        Ok(Self { n, clauses })
    }

    pub fn from_signed(n: usize, clauses: &[[i64; 3]]) -> Result<Self> {
        let clauses = clauses
            .iter()
            .map(|c| {
                Ok([
                    Literal::from_signed(c[0])?,
                    Literal::from_signed(c[1])?,
                    Literal::from_signed(c[2])?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, clauses)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = text::parse(text)?;
        Self::from_signed(raw.n, &raw.rows)
    }

    pub fn to_text(&self) -> String {
        text::render(self.n, self.clauses.iter().map(|c| c.map(Literal::to_signed)))
    }

    pub fn variables(&self) -> usize {
        self.n
    }

    pub fn clauses(&self) -> &[[Literal; 3]] {
        &self.clauses
    }

    pub fn is_satisfied_by(&self, assignment: &[bool]) -> bool {
        assignment.len() == self.n
            && self
                .clauses
                .iter()
                .all(|c| c.iter().filter(|l| l.eval(assignment)).count() == 1)
    }

    /// Random instance with `n` variables and `m` clauses over distinct
    /// variables with random polarities. Needs `n ≥ 3`.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument("a 3-literal clause needs n >= 3".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clauses = (0..m)
            .map(|_| {
                let vars = sample(&mut rng, n, 3);
                [0, 1, 2].map(|k| Literal {
                    var: vars.index(k) + 1,
                    negated: rng.random_bool(0.5),
                })
            })
            .collect();
        Self::new(n, clauses)
    }
}

/// Scans assignments in binary counting order (variable 1 is the low bit)
/// and returns the first satisfying one.
pub fn solve_1in3sat_bruteforce(inst: &OneInThreeSat) -> Result<Option<Vec<bool>>> {
    let n = inst.n;
    if n > MAX_SAT_VARIABLES {
        return Err(Error::TooLarge {
            what: "variables",
            value: n,
            limit: MAX_SAT_VARIABLES,
        });
    }
    Ok((0u32..1 << n)
        .map(|mask| (0..n).map(|j| mask >> j & 1 == 1).collect::<Vec<_>>())
        .find(|a| inst.is_satisfied_by(a)))
}

/// Linear regression instance: `w` is `k` ones then `n−k` minus ones, one
/// datapoint per clause with `+1`/`−1` at its positive/negated variables,
/// every target `−1` and threshold `2/m`.
pub fn reduce_1in3sat<S: Scalar>(inst: &OneInThreeSat, k: usize, loss: LossKind) -> Result<ReductionArtifacts<S>> {
    if !matches!(loss, LossKind::Abs | LossKind::Square) {
        return Err(Error::Unsupported(format!("1-in-3 SAT reduces to abs or square loss, not {loss}")));
    }
    let (n, m) = (inst.n, inst.clauses.len());
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("no clauses to turn into datapoints".into()));
    }
    let one = S::one();
    let weights = (0..n).map(|j| if j < k { one } else { S::zero() - one }).collect();
    let inputs = inst
        .clauses
        .iter()
        .map(|c| {
            let mut x = vec![S::zero(); n];
            for l in c {
                x[l.var - 1] = if l.negated { S::zero() - one } else { one };
            }
            x
        })
        .collect();
    let targets = vec![S::zero() - one; m];
    let threshold = S::from_count(2) / S::from_count(m);
    Ok(ReductionArtifacts {
        instance: ExistsPermInstance::new(weights, inputs, targets, loss, threshold)?,
        k: Some(k),
        epsilon: None,
        z: None,
    })
}

/// The assignment encoded by a witness for the `k`-th instance: variable `j`
/// is true iff it receives one of the `+1` weights.
pub fn assignment_from_permutation(perm: &[usize], k: usize) -> Vec<bool> {
    perm.iter().map(|&p| p < k).collect()
}
