//! Minimal reverse-mode automatic differentiation over dense vectors and
//! matrices, plus the optimizer pieces the trainer needs (Adam, global-norm
//! gradient clipping, inverted dropout).
//!
//! The design is a classic eager tape: operations compute their value
//! immediately and record what they did; [`Tape::backward`] replays the
//! records in reverse to accumulate gradients into a [`ParamGrads`] buffer
//! that lives outside the tape. Model parameters live in a [`ParamStore`]
//! and are referenced by [`ParamId`], so one set of parameters can back any
//! number of short-lived tapes (one per sentence during training).

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{clip_global_norm, AdamHyper, AdamState};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Mode, NodeId, Tape};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};

use num_traits::Float;
use thiserror::Error;

/// Floating-point scalar the engine is generic over. Training normally runs
/// at `f32`; gradient checking runs at `f64`.
pub trait Real: Float + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} operand, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: operand list is empty")]
    EmptyInput { op: &'static str },
    #[error("dropout rate {rate} is outside [0, 1)")]
    BadDropoutRate { rate: f64 },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
