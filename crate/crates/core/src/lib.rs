//! Hiding networks inside carrier networks through keyed parameter
//! permutations, and the inspector's side of the story.
//!
//! * [`nn`] is a minimal deterministic training engine.
//! * [`keyspace`] turns a user key into per-layer permutations.
//! * [`trojan`] trains a carrier jointly with its permuted views and extracts them.
//! * [`detection`] holds threshold tests, exhaustive permutation search and the
//!   min-cost matching attack.
//! * [`reductions`] builds permutation-search instances from 1-in-3 SAT and
//!   cyclic ordering and checks the equivalences by brute force.
//! * [`harness`] covers datasets, checkpoints, run configs and ensembles.
//!
//! Numeric code is generic over [`Scalar`]/[`Real`]; the aliases below fix the
//! common choices (`f32` for training and checkpoints, `f64` for finite
//! difference oracles, exact rationals for the reductions).

pub mod detection;
pub mod error;
pub mod harness;
pub mod keyspace;
pub mod nn;
pub mod reductions;
pub mod scalar;
pub mod trojan;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Dataset32 = harness::Dataset<f32>;
pub type ExactInstance = detection::ExistsPermInstance<num_rational::Rational64>;
pub type FloatInstance = detection::ExistsPermInstance<f64>;
