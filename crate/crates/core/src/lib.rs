//! Estimation of heterogeneous log-transmissivity fields in steady-state Darcy
//! flow from sparse head and log-transmissivity measurements.
//!
//! The unknown field is represented by a truncated conditional Karhunen–Loève
//! expansion built from a Gaussian process fitted to the direct measurements,
//! and its coefficients are estimated by trust-region nonlinear least squares
//! against a two-point-flux finite-volume model. A grid-parameterized MAP
//! estimator is provided as a baseline, and the head-sensitivity part of the
//! Jacobian can be accelerated by restricting triangular solves to closures in
//! the Cholesky factor's elimination tree.

pub mod bench;
pub mod ckle;
pub mod fvtpfa;
pub mod gpr;
pub mod inverse;
pub mod mesh;
pub mod pipeline;
pub mod sparsechol;
pub mod synth;
