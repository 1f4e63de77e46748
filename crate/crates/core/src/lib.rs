//! Desk-scale laboratory for geometry-aware instance-reweighted adversarial
//! training.
//!
//! The crate bundles a from-scratch f64 feed-forward engine with reverse-mode
//! gradients ([`nn`]), an L-infinity attack suite that also reports how many
//! PGD steps each example survives ([`attacks`]), weight-assignment schemes
//! mapping that geometry value to per-example loss weights ([`reweight`]),
//! epoch-level trainers for the AT / FAT / TRADES / MART families
//! ([`trainers`]), seeded toy datasets plus an IDX image loader ([`data`]),
//! and robustness diagnostics ([`eval`]).
//!
//! Every source of randomness is an explicit [`rng::XorShiftRng`], so runs
//! are bit-reproducible functions of their seed.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod reweight;
pub mod rng;
pub mod tensor;
pub mod trainers;

pub use error::{Error, Result};
pub use tensor::Tensor;
