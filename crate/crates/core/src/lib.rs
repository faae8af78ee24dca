//! Robust CP factorization of seasonal tensor streams.
//!
//! A data stream is modeled as a sequence of dense subtensors ("slices")
//! arriving one per time step, each with an observation mask and possibly
//! gross outliers. The model is a CP decomposition whose last mode is
//! temporal: every slice is reconstructed from fixed non-temporal factor
//! matrices and one temporal row vector per step, and the temporal rows are
//! tracked by per-column additive Holt-Winters recursions so that future
//! slices can be forecast.
//!
//! The crate is split along the two phases of the method plus their shared
//! primitives:
//!
//! * [`tensor`] — dense tensors, observation masks, factor sets, Khatri-Rao
//!   products, unfoldings and Kruskal reconstruction;
//! * [`hw`] — additive Holt-Winters recursions (update / forecast / fit) and
//!   the robust loss functions (Huber psi, Tukey biweight rho);
//! * [`batch`] — alternating least squares with temporal smoothness
//!   penalties and iterated outlier soft-thresholding, used to initialize a
//!   model from a stream prefix;
//! * [`online`] — the per-step streaming update: forecast, outlier removal,
//!   scale tracking, gradient refinement of all factors, Holt-Winters
//!   bookkeeping.
//!
//! Everything is generic over the floating-point scalar via [`Scalar`]
//! (implemented for `f32` and `f64`); concrete aliases such as [`Tensor64`]
//! and [`StreamState64`] are provided at the crate root.

pub mod batch;
pub mod error;
pub mod hw;
pub mod matrix;
pub mod online;
pub mod scalar;
mod solve;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// `f64` dense tensor.
pub type Tensor64 = tensor::DenseTensor<f64>;
/// `f32` dense tensor.
pub type Tensor32 = tensor::DenseTensor<f32>;
/// `f64` factor matrix.
pub type Matrix64 = matrix::Matrix<f64>;
/// `f32` factor matrix.
pub type Matrix32 = matrix::Matrix<f32>;
/// `f64` factor set.
pub type FactorSet64 = tensor::FactorSet<f64>;
/// `f32` factor set.
pub type FactorSet32 = tensor::FactorSet<f32>;
/// `f64` streaming model state.
pub type StreamState64 = online::StreamState<f64>;
/// `f32` streaming model state.
pub type StreamState32 = online::StreamState<f32>;
