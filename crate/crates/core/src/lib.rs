//! Numerical laboratory for strong laws and complete convergence of
//! dependent sequences normalized by regularly varying sequences.

// Negated float comparisons are used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod convergence;
pub mod counterexample;
pub mod dependence;
pub mod domination;
pub mod error;
pub mod law;
pub mod quadrature;
pub mod rng;
pub mod rv_funcs;
pub mod special;
pub mod stats;

pub use error::{LabError, Result};
