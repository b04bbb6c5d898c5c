//! Hand-written neural models: a feed-forward spec encoder feeding either a
//! bidirectional GRU that predicts op sequences, or a sigmoid head that
//! predicts which ops occur at all.
//!
//! Everything is generic over the float type so gradients can be checked in
//! `f64`; training and inference use `f32`.

mod frames;
mod io;
mod layers;
mod multilabel;
mod seq;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float as NumFloat, FromPrimitive};
use thiserror::Error;

use crate::encoding::EncodeError;

pub use frames::{encode_frames, record_frames, Frame, MAX_STEPS};
pub use io::{weights_kind, WeightsError};
pub use layers::{featurize, Dense, Gru, Standardizer, FEATURES};
pub use multilabel::MultiLabelModel;
pub use seq::{cosine, HiddenProbe, Hypothesis, SeqHyper, SeqModel};
pub use train::{
    multilabel_targets, train_multilabel, train_seq, EpochStats, TrainConfig, TrainReport,
};

/// Float types the models can be instantiated with.
pub trait Float:
    NumFloat
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + Sum
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl<T> Float for T where
    T: NumFloat
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + AddAssign
        + Sum
        + Debug
        + Send
        + Sync
        + 'static
{
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("record labelled with op `{0}` outside the model registry")]
    UnknownLabel(String),
    #[error("sequence of {0} steps exceeds the model's unroll length")]
    SequenceTooLong(usize),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

pub(crate) fn cast<F: Float>(v: f64) -> F {
    F::from_f64(v).expect("finite constant")
}
