//! Learning-based safe tracking control for a kinematic bicycle.
//!
//! Everything is generic over the scalar type; the `*64` aliases fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod cbf;
pub mod clf;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod learning;
pub mod qp;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Controller64 = controller::Controller<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type CanonicalState64 = dynamics::CanonicalState<f64>;
pub type Plant64 = dynamics::Plant<f64>;
pub type BarrierSet64 = cbf::BarrierSet<f64>;
pub type QpProblem64 = qp::QpProblem<f64>;
pub type GpModel64 = learning::GpModel<f64>;
pub type BlrModel64 = learning::BlrModel<f64>;
pub type Dataset64 = learning::Dataset<f64>;
pub type Controller32 = controller::Controller<f32>;
