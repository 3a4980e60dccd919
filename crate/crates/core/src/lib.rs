//! Estimation of several wave-shape functions in one oscillatory signal and
//! the times at which the signal switches between them.
//!
//! The pipeline warps a signal by the inverse of its estimated phase and
//! demodulates it by its estimated amplitude, repeating until the cycle
//! matrix stops simplifying. The warped cycles are then aligned, clustered and
//! summarized by trigonometric fits of each cluster median. Every numeric
//! routine is generic over [`scalar::Real`]; the aliases below fix the scalar
//! type for the common cases.

pub mod error;
pub mod fft;
pub mod interp;
pub mod linalg;
pub mod scalar;
pub mod signal_model;
pub mod tfa;
pub mod warping;
pub mod cycles;
pub mod clustering;
pub mod pipeline;
pub mod eval;

pub use error::{Result, WarpError};
pub use scalar::Real;

pub type Signal64 = signal_model::Signal<f64>;
pub type Signal32 = signal_model::Signal<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type CycleMatrix64 = cycles::CycleMatrix<f64>;
pub type CycleMatrix32 = cycles::CycleMatrix<f32>;
pub type WarpConfig64 = warping::WarpConfig<f64>;
pub type WarpConfig32 = warping::WarpConfig<f32>;
pub type PipelineConfig64 = pipeline::PipelineConfig<f64>;
pub type PipelineConfig32 = pipeline::PipelineConfig<f32>;
pub type Analysis64 = pipeline::Analysis<f64>;
pub type Analysis32 = pipeline::Analysis<f32>;
pub type Table1Config64 = eval::Table1Config<f64>;
pub type Table1Report64 = eval::Table1Report<f64>;
