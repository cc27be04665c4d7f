//! Numerical solver for a mean-field game of spatial human-capital
//! accumulation: closed-form Hamiltonians, a log-domain HJB solver, a
//! McKean–Vlasov particle system, exact discrete optimal transport and a
//! damped fixed-point iteration between them.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod hjb;
pub mod interaction;
pub mod io;
pub mod measures;
pub mod mfg;
pub mod numeric;
pub mod params;
pub mod rng;

pub use error::{Error, Result};
