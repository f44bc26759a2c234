// `!(x > 0.0)`-style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Sampled-softmax knowledge distillation at desk scale.
//!
//! Trains a small student classifier from a teacher's soft labels while
//! computing last-layer gradients over only a sampled or selected subset of
//! classes. Ships the full-softmax distillation baseline, deterministic
//! prediction-difference selection, and three importance-sampling variants:
//! uniform, fixed-teacher, and a dynamic two-Laplace rank mixture whose
//! right-hand scale grows linearly during training.

pub mod data;
pub mod error;
pub mod estimators;
pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod proposals;
pub mod soft_labels;
pub mod timing;
pub mod train;

pub use error::{Error, Result};
