//! Numerical laboratory for AC power flow learned by a network of
//! dissipative quantum perceptrons.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] loads and validates bus data and the bus admittance matrix.
//! * [`powerflow`] solves the AC power flow by Newton-Raphson (with a
//!   Gauss-Seidel reference used for cross-validation).
//! * [`qsim`] simulates a probe qubit under repeated collisions with spin-J
//!   information-reservoir units and extracts its steady-state magnetization.
//! * [`activation`] fits the `tanh(beta * u)` steepness of simulated transfer
//!   curves and provides the activation used by the network.
//! * [`nn`] is a dense feedforward network with backpropagation and the
//!   SGD / Adam / Adamax / Nadam optimizers.
//! * [`dataset`] generates supervised samples by perturbing loads and solving
//!   the power flow, then scales and splits them.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to sequential iteration
//! otherwise. Results are identical either way.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod powerflow;
pub mod qsim;
pub mod seeding;

pub use error::{Error, Result};
