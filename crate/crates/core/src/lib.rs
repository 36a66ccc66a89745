//! Single-trajectory consistency distillation on analytic diffusion models.
//!
//! A student consistency function is distilled from a teacher along the one
//! reverse trajectory that starts at a fixed partial-noise level, using a
//! bank of in-flight teacher trajectories and an asymmetric hinge
//! adversarial loss. The data law is a Gaussian mixture, so the teacher's
//! noise predictor and score are exact and its imperfection is a dial.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bank;
pub mod distill;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod toolkit;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use models::{Condition, GmmSpec};
pub use schedule::{NoiseSchedule, ScheduleKind, StepGrid};

/// Tool version recorded in manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
