//! Recursive KalmanNet: a Kalman-filter-structured estimator whose gain and
//! corrected-noise Cholesky factor come from two small recurrent networks,
//! plus classical Kalman baselines, a bimodal-noise benchmark generator,
//! Gaussian-NLL training and consistency metrics.

pub mod error;
pub mod evaluation;
pub mod kalman;
pub mod neural;
pub mod numerics;
pub mod rkn;
pub mod statespace;
pub mod training;

pub use error::{Error, NumericError, Result};

/// Double precision dense matrix, used by the learned estimator.
pub type Matrix64 = numerics::Matrix<f64>;
/// Single precision dense matrix.
pub type Matrix32 = numerics::Matrix<f32>;
pub type LowerTriangular64 = numerics::LowerTriangular<f64>;
pub type StateSpaceModel64 = statespace::LinearStateSpaceModel<f64>;
pub type StateSpaceModel32 = statespace::LinearStateSpaceModel<f32>;
