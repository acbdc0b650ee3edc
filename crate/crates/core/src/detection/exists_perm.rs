//! EXISTS-PERM: given a linear model's weights, a dataset, a loss and a
//! threshold, is there a permutation of the weights whose mean loss is below
//! the threshold? Solved here by exhaustive lexicographic enumeration, which
//! is only feasible for tiny dimensions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyspace::Permutation;
use crate::nn::{point_loss, LossKind};
use crate::scalar::Scalar;

pub const MAX_BRUTE_FORCE_DIM: usize = 9;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PERMNET_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistsPermInstance<S> {
    pub weights: Vec<S>,
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<S>,
    pub loss: LossKind,
    pub threshold: S,
}

impl<S: Scalar> ExistsPermInstance<S> {
    pub fn new(weights: Vec<S>, inputs: Vec<Vec<S>>, targets: Vec<S>, loss: LossKind, threshold: S) -> Result<Self> {
        let d = weights.len();
        if d == 0 {
            return Err(Error::InvalidArgument("weight vector is empty".into()));
        }
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs and {} targets; need a non-empty labeled dataset",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(bad) = inputs.iter().position(|x| x.len() != d) {
            return Err(Error::shape(format!("input {bad} does not have {d} entries")));
        }
        if !threshold.to_f64().is_some_and(f64::is_finite) {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        if loss == LossKind::CrossEntropy {
            return Err(Error::Unsupported("cross_entropy on a scalar-output model".into()));
        }
        Ok(Self {
            weights,
            inputs,
            targets,
            loss,
            threshold,
        })
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    /// Mean loss of the linear model with weights `w_π = (w[π[0]], …)`.
    pub fn loss_of(&self, perm: &[usize]) -> Result<S> {
        let mut total = S::zero();
        for (x, &y) in self.inputs.iter().zip(&self.targets) {
            let z = perm
                .iter()
                .zip(x)
                .fold(S::zero(), |acc, (&p, &xi)| acc + self.weights[p] * xi);
            total = total + point_loss(self.loss, z, y)?;
        }
        Ok(total / S::from_count(self.inputs.len()))
    }

    pub fn accepts(&self, perm: &[usize]) -> Result<bool> {
        Ok(self.loss_of(perm)? < self.threshold)
    }
}

/// Worker count from `PERMNET_THREADS`, defaulting to the available cores.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Advances to the next permutation in lexicographic order.
pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Lexicographically first permutation in the block starting with `head`
/// that satisfies `pred`.
pub(crate) fn scan_block(n: usize, head: usize, mut pred: impl FnMut(&[usize]) -> Result<bool>) -> Result<Option<Vec<usize>>> {
    let mut p: Vec<usize> = std::iter::once(head).chain((0..n).filter(|&i| i != head)).collect();
    loop {
        if pred(&p)? {
            return Ok(Some(p));
        }
        if !next_permutation(&mut p[1..]) {
            return Ok(None);
        }
    }
}

/// First permutation in lexicographic order satisfying `pred`, scanned over
/// `threads` workers. The answer does not depend on scheduling.
pub(crate) fn first_satisfying<F>(n: usize, threads: usize, pred: F) -> Result<Option<Vec<usize>>>
where
    F: Fn(&[usize]) -> Result<bool> + Sync,
{
    if n == 0 {
        return Ok(if pred(&[])? { Some(Vec::new()) } else { None });
    }
    let next_block = AtomicUsize::new(0);
    let best = AtomicUsize::new(usize::MAX);
    let found: Mutex<Vec<(usize, Vec<usize>)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n) {
            s.spawn(|| loop {
                let head = next_block.fetch_add(1, Ordering::SeqCst);
                if head >= n || head > best.load(Ordering::SeqCst) {
                    break;
                }
                match scan_block(n, head, &pred) {
                    Ok(Some(p)) => {
                        best.fetch_min(head, Ordering::SeqCst);
                        found.lock().expect("no poisoned lock").push((head, p));
                    }
                    Ok(None) => {}
                    Err(e) => {
                        failure.lock().expect("no poisoned lock").get_or_insert(e);
                        best.fetch_min(0, Ordering::SeqCst);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("no poisoned lock") {
        return Err(e);
    }
    Ok(found
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .min_by_key(|(h, _)| *h)
        .map(|(_, p)| p))
}

pub fn brute_force_exists_perm<S: Scalar>(inst: &ExistsPermInstance<S>) -> Result<Option<Permutation>> {
    brute_force_exists_perm_with(inst, worker_threads())
}

pub fn brute_force_exists_perm_with<S: Scalar>(inst: &ExistsPermInstance<S>, threads: usize) -> Result<Option<Permutation>> {
    let d = inst.dimension();
    if d > MAX_BRUTE_FORCE_DIM {
        return Err(Error::TooLarge {
            what: "weight dimension",
            value: d,
            limit: MAX_BRUTE_FORCE_DIM,
        });
    }
    first_satisfying(d, threads, |p| inst.accepts(p))?
        .map(Permutation::new)
        .transpose()
}
