//! Numerical laboratory for entropy-regularized control.
//!
//! The crate couples two layers that share one spatial discretization:
//!
//! * a discrete-time, entropy-regularized MDP whose transition kernel is the
//!   time-`h` Fokker–Planck flow of a controlled SDE ([`kernel`], [`mdp`]);
//! * the continuous-time exploratory and classical HJB equations together
//!   with linear policy evaluation ([`hjb`]).
//!
//! Both layers are built on the same jump-rate generator ([`operator`]), so the
//! gap between them on a fixed grid is pure time-discretization and exploration
//! error. [`sim`] provides an independent Monte Carlo oracle and [`rates`] the
//! sweep/fit harness.
//!
//! The crate is `no_std` (with `alloc`). Parallelism is injected through the
//! [`exec::Executor`] trait; [`exec::Serial`] is always available.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod grid;
pub mod hjb;
pub mod kernel;
pub mod linalg;
pub(crate) mod math;
pub mod mdp;
pub mod operator;
pub mod problem;
pub mod rates;
pub mod sim;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use grid::{ControlGrid, GridPair, PolicyField, ScalarField, StateGrid};
pub use kernel::TransitionKernel;
pub use problem::{ProblemSpec, SolveParams};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
