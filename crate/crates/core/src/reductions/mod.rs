//! Executable hardness reductions. 1-in-3 SAT maps to permutation search
//! over a linear regressor with abs or square loss; cyclic ordering maps to
//! permutation search over a linear classifier with 0-1 or logistic loss.
//! Both sides are solved by brute force and compared.

mod cyclic;
mod sat;
mod text;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cyclic::{
    default_epsilon, exact_logistic_search, per_triple_losses, reduce_cyclic, solve_cyclic_bruteforce, CyclicOrdering,
    MAX_CYCLIC_ELEMENTS,
};
pub use sat::{
    assignment_from_permutation, reduce_1in3sat, solve_1in3sat_bruteforce, Literal,
    OneInThreeSat, MAX_SAT_VARIABLES,
};

use crate::detection::{brute_force_exists_perm, ExistsPermInstance, MAX_BRUTE_FORCE_DIM};
use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::scalar::Scalar;

/// A reduced instance plus the parameters used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionArtifacts<S> {
    pub instance: ExistsPermInstance<S>,
    /// Number of `+1` weights (1-in-3 SAT only).
    pub k: Option<usize>,
    /// Logistic reduction only.
    pub epsilon: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    OneInThreeSat,
    CyclicOrdering,
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1in3sat" | "one_in_three_sat" => Ok(Problem::OneInThreeSat),
            "cyclic" | "cyclic_ordering" => Ok(Problem::CyclicOrdering),
            other => Err(Error::InvalidArgument(format!("unknown problem {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceInstance {
    OneInThreeSat(OneInThreeSat),
    CyclicOrdering(CyclicOrdering),
}

impl SourceInstance {
    pub fn parse(problem: Problem, text: &str) -> Result<Self> {
        Ok(match problem {
            Problem::OneInThreeSat => SourceInstance::OneInThreeSat(OneInThreeSat::parse(text)?),
            Problem::CyclicOrdering => SourceInstance::CyclicOrdering(CyclicOrdering::parse(text)?),
        })
    }
}

/// Outcome of comparing both sides of a reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub source_yes: bool,
    pub exists_perm_yes: bool,
}

impl Verification {
    pub fn agrees(&self) -> bool {
        self.source_yes == self.exists_perm_yes
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_BRUTE_FORCE_DIM {
        return Err(Error::TooLarge {
            what: "instance size",
            value: n,
            limit: MAX_BRUTE_FORCE_DIM,
        });
    }
    Ok(())
}

/// SAT side by assignment scan; permutation side by trying every `k`.
/// Exact rational arithmetic throughout.
pub fn verify_1in3sat(inst: &OneInThreeSat, loss: LossKind) -> Result<Verification> {
    check_dim(inst.variables())?;
    let source_yes = solve_1in3sat_bruteforce(inst)?.is_some();
    let mut exists_perm_yes = false;
    for k in 0..=inst.variables() {
        let art = reduce_1in3sat::<Rational64>(inst, k, loss)?;
        if brute_force_exists_perm(&art.instance)?.is_some() {
            exists_perm_yes = true;
            break;
        }
    }
    Ok(Verification {
        source_yes,
        exists_perm_yes,
    })
}

/// Exact on both losses: rationals for 0-1, big rationals over powers of
/// `r = (1−ε)/ε` for logistic.
pub fn verify_cyclic(inst: &CyclicOrdering, loss: LossKind, epsilon: Option<f64>) -> Result<Verification> {
    check_dim(inst.elements())?;
    let source_yes = solve_cyclic_bruteforce(inst)?.is_some();
    let exists_perm_yes = match loss {
        LossKind::Logistic => exact_logistic_search(inst, epsilon)?.is_some(),
        _ => search::<Rational64>(&reduce_cyclic(inst, loss, epsilon)?)?,
    };
    Ok(Verification {
        source_yes,
        exists_perm_yes,
    })
}

fn search<S: Scalar>(art: &ReductionArtifacts<S>) -> Result<bool> {
    Ok(brute_force_exists_perm(&art.instance)?.is_some())
}

/// True iff both sides of the reduction give the same answer.
pub fn verify_reduction(inst: &SourceInstance, loss: LossKind) -> Result<bool> {
    let v = match inst {
        SourceInstance::OneInThreeSat(s) => verify_1in3sat(s, loss)?,
        SourceInstance::CyclicOrdering(c) => verify_cyclic(c, loss, None)?,
    };
    Ok(v.agrees())
}

/// Random source instance with `3 ≤ n ≤ max_n` and `1 ≤ m ≤ max_m`.
pub fn random_instance(problem: Problem, max_n: usize, max_m: usize, seed: u64) -> Result<SourceInstance> {
    if max_n < 3 || max_m == 0 {
        return Err(Error::InvalidArgument("random instances need max_n >= 3 and max_m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=max_n);
    let m = rng.random_range(1..=max_m);
    let inner = rng.random();
    Ok(match problem {
        Problem::OneInThreeSat => SourceInstance::OneInThreeSat(OneInThreeSat::random(n, m, inner)?),
        Problem::CyclicOrdering => SourceInstance::CyclicOrdering(CyclicOrdering::random(n, m, inner)?),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialTally {
    pub trials: usize,
    pub agree: usize,
    pub disagree: usize,
    /// Instances whose source side is satisfiable.
    pub source_yes: usize,
}

/// Verifies `trials` random instances; instance `i` is drawn from `seed + i`.
pub fn verify_random(problem: Problem, loss: LossKind, trials: usize, max_n: usize, max_m: usize, seed: u64) -> Result<TrialTally> {
    let mut tally = TrialTally::default();
    for i in 0..trials {
        let v = match random_instance(problem, max_n, max_m, seed.wrapping_add(i as u64))? {
            SourceInstance::OneInThreeSat(s) => verify_1in3sat(&s, loss)?,
            SourceInstance::CyclicOrdering(c) => verify_cyclic(&c, loss, None)?,
        };
        tally.trials += 1;
        tally.source_yes += v.source_yes as usize;
        if v.agrees() {
            tally.agree += 1;
        } else {
            tally.disagree += 1;
        }
    }
    Ok(tally)
}
