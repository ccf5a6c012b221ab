//! Lens data, boundary jets and linearized tensor tomography on Riemannian discs.
//!
//! The domain is the closed unit disc in a single chart. Metrics come from a
//! small set of families ([`metric`]); geodesics are traced by a fixed-step
//! Runge-Kutta integrator ([`geodesic`]) and summarized as lens data
//! ([`lens`]). The remaining modules recover boundary jets from travel times
//! ([`jet`]), work with symmetric 2-tensors on a grid ([`tensor`]), assemble
//! the discrete geodesic ray transform ([`ray`]) and run the gauge and
//! linearization experiments ([`rigidity`]).

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cg;
pub mod config;
pub mod error;
pub mod field;
pub mod fit;
pub mod geodesic;
pub mod jet;
pub mod lens;
pub mod metric;
pub mod ray;
pub mod rigidity;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};

pub type Point = nalgebra::Vector2<f64>;
