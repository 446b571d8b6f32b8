//! Finite-horizon quadratic control of linear systems whose observation
//! matrix depends bilinearly on the input.
//!
//! The crate provides the system model and benchmark generators, the
//! input-dependent Kalman filter, the deterministic belief-space planning
//! objective with an exact adjoint gradient, an L-BFGS minimizer, the
//! `Sep`, `Sep-MPC` and `B-MPC` controllers, and an experiment harness that
//! runs matched-noise closed-loop trials and writes CSV summaries.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod planning;
pub mod rng;
pub mod system;

pub use controllers::{ControllerKind, ControllerSpec, RiccatiTable};
pub use error::{Error, Result};
pub use estimation::Belief;
pub use optimizer::{InitScheme, LbfgsConfig};
pub use planning::{CostMode, PlanningProblem};
pub use system::{NoiseRealization, SystemModel};
