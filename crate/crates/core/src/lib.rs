//! Two-weight constants for the Littlewood–Paley `g*_lambda` function with
//! fractional Poisson kernels, evaluated on pairs of atomic weights.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which every estimator and check uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod constants;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod martingale;
pub mod measures;
pub mod operators;
pub mod quadrature;
pub mod rng;
mod scalar;
pub mod suite;
pub mod sweep;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Cube64 = geometry::Cube<f64>;
pub type ShiftedGrid64 = geometry::ShiftedGrid<f64>;
pub type GoodBadParams64 = geometry::GoodBadParams<f64>;
pub type KernelParams64 = kernels::KernelParams<f64>;
pub type AtomicMeasure64 = measures::AtomicMeasure<f64>;
pub type WeightPair64 = measures::WeightPair<f64>;
pub type QuadratureSpec64 = quadrature::QuadratureSpec<f64>;
pub type Region64 = quadrature::Region<f64>;
