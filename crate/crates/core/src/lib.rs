//! Pulse-modulated output corridor control of positive third-order plants.
//!
//! The crate synthesizes amplitude/frequency modulated impulsive feedback
//! that keeps the output of a positive chain plant (optionally wrapped in a
//! Wiener or Hammerstein static nonlinearity) inside a prescribed corridor,
//! and simulates the resulting hybrid closed loop.
//!
//! The pipeline is:
//! 1. [`plant`]: build the chain plant and its static nonlinearities.
//! 2. [`cycle`]: closed-form fixed point and corridor extrema of a 1-cycle.
//! 3. [`design`]: pick the period and dose, synthesize the modulation
//!    functions and check orbital stability of the designed cycle.
//! 4. [`simulate`]: event-driven simulation of the closed loop.

// `!(a < b)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cycle;
pub mod design;
pub mod error;
pub mod numerics;
pub mod plant;
pub mod simulate;

pub use error::{Error, Result};
pub use numerics::{NumericsSettings, SmallMatrix, SmallVector};
