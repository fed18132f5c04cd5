//! Specific Wasserstein divergences of martingale diffusions, optimal
//! win-martingales, and the numerical checks around them.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`). The
//! defaults and the aliases below are `f64`.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod grid;
pub mod quad;
pub mod rng;
pub mod scalar;
pub mod schrodinger;
pub mod sde;
pub mod wasserstein;
pub mod winmart;

pub use ensemble::PathEnsemble;
pub use error::{Error, Result};
pub use field::{Boundary, Interval, MartingaleModel, Regularity, VolatilityField};
pub use grid::TimeGrid;
pub use rng::{derive_stream, RngStream};
pub use scalar::{MeanStderr, Scalar};
pub use wasserstein::EmpiricalDist;

pub type Grid64 = TimeGrid<f64>;
pub type Grid32 = TimeGrid<f32>;
pub type Field64 = VolatilityField<f64>;
pub type Field32 = VolatilityField<f32>;
pub type Model64 = MartingaleModel<f64>;
pub type Model32 = MartingaleModel<f32>;
pub type Ensemble64 = PathEnsemble<f64>;
pub type Ensemble32 = PathEnsemble<f32>;
pub type Empirical64 = EmpiricalDist<f64>;
pub type Empirical32 = EmpiricalDist<f32>;
