//! The inspector's toolkit.

mod exists_perm;
mod matching;
mod threshold;

pub use exists_perm::{
    brute_force_exists_perm, brute_force_exists_perm_with, worker_threads, ExistsPermInstance,
    MAX_BRUTE_FORCE_DIM, THREADS_ENV,
};
pub(crate) use exists_perm::first_satisfying;
pub use matching::{
    false_positive_sweep, matching_attack, matching_attack_eval, matching_cost, mincost_match,
    quantize, sweep_csv, sweep_rows, MatchResult, Matching, SweepRow, DEFAULT_DECIMALS,
};
pub use threshold::{threshold_test, ThresholdDecision};
