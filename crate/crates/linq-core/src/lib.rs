//! Solvers, samplers and instance generators for discounted MDPs whose
//! transition kernel is linear in known state-action features:
//! `P(s'|s,a) = sum_k phi_k(s,a) psi_k(s')` with `phi` given and `psi` unknown.
//!
//! The crate provides:
//! - the data model ([`mdp`], [`params`]) and Bellman operators ([`bellman`]);
//! - a seeded generative model with exact sample accounting ([`sampling`]);
//! - exact oracles for scoring and realizability checks ([`oracle`]);
//! - instance families, anchor discovery and feature regularity ([`instances`]);
//! - the basic phased parametric Q-learner ([`ppq`]) and its variance-reduced,
//!   confidence-bounded, monotonicity-preserving refinement ([`oppq`]).
//!
//! Everything is deterministic given seeds: instances are pure functions of
//! their generator parameters, and learners consume samples only through
//! [`sampling::GenerativeModel`].

#![forbid(unsafe_code)]
// Validation uses `!(x > 0.0)` deliberately: it rejects NaN where `x <= 0.0`
// would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bellman;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod mdp;
pub mod oppq;
pub mod oracle;
pub mod params;
pub mod ppq;
pub mod sampling;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{CoreError, Result};
