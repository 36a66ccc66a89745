//! Data law and teacher family.
//!
//! The data distribution is an isotropic Gaussian mixture, so the exact
//! MMSE noise predictor (and the score) are available in closed form. A
//! bounded additive perturbation turns the exact predictor into a teacher
//! with a known error budget.

mod features;
mod gmm;
mod teacher;

pub use features::{FeatureKind, FeatureMap};
pub use gmm::{Condition, GmmSpec};
pub use teacher::{
    AnalyticTeacher, FieldKind, NoiseInformedTeacher, NoisePredictor, PerturbationField,
    PerturbedTeacher,
};
