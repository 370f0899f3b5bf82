//! Hybrid quantum-classical actor-critic for collision-free navigation.
//!
//! The crate bundles a statevector simulator ([`qsim`]), QIDEP circuit
//! construction ([`qidep`]), a small classical network stack ([`nn`]), a
//! driving POMDP ([`env`]), the A2C agent with quantum or classical critic
//! ([`agent`]) and post-hoc capacity analysis ([`analysis`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod agent;
pub mod analysis;
pub mod cli;
pub mod env;
pub mod error;
pub mod nn;
pub mod qidep;
pub mod qsim;
pub mod rng;

pub use error::{NavqError, Result};
