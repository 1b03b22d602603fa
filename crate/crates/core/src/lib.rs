//! Exact minimax checks for robust maximization of non-concave utilities.
//!
//! The crate works on finite scenario spaces where every state carries an
//! auxiliary uniform coordinate, so randomized payoffs stand in for the
//! atomless part of the model. On top of that it provides:
//!
//! * piecewise-linear utility curves, their concave envelopes, and the gap
//!   intervals where the envelope strictly exceeds the curve ([`utility`]),
//! * densities, measure families, pricing measures, and the quantile
//!   coupling that realizes a uniform coordinate per state ([`space`]),
//! * randomized payoffs with budget feasibility checks ([`payoff`]),
//! * the two-point randomization that lifts a payoff onto the envelope
//!   without raising its price ([`improve`]),
//! * exact solvers for the concavified robust problem and certified grid
//!   evaluation of the inf-sup values ([`solve`]),
//! * the eight-quantity equality/inequality diagram relating all of the
//!   above, plus a seeded ensemble driver ([`diagram`]).
//!
//! The crate is `no_std` (with `alloc`); the `std` feature only adds
//! `std::error::Error` for the error type and std-seeded RNG conveniences.

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons like `!(x > 0.0)` are deliberate throughout: unlike
// `x <= 0.0` they also catch NaN, which must always take the rejecting arm.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod diagram;
pub mod error;
pub mod improve;
pub mod instance;
pub mod payoff;
pub mod solve;
pub mod space;
pub mod utility;

pub use error::{Error, Result};
pub use instance::Instance;
