//! A small decoder-only transformer over hybrid text/audio streams, with
//! manual backpropagation in double precision.

use thiserror::Error;

use crate::delay::DelayError;
use crate::dialog::DialogError;
use crate::interleaver::InterleaveError;
use crate::loss::LossError;
use crate::token_space::VocabError;

pub mod checkpoint;
pub mod config;
pub mod encode;
pub mod generate;
pub mod gradcheck;
pub mod network;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ModelConfig, Optimizer, ParamGroup, StageConfig, Trainable};
pub use encode::{inject_speaker, resolve_context, Example};
pub use generate::{generate, token_accuracy, Decode, Generation, Limits};
pub use gradcheck::{grad_check, GradCheckReport};
pub use network::{embed_hybrid, forward, ForwardPass, ModelInput};
pub use params::{Layout, ParamInfo, Parameters};
pub use train::{Trainer, StepReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("input at position {pos}: {msg}")]
    Input { pos: usize, msg: String },
    #[error("sequence of length {len} exceeds max_seq {max}")]
    TooLong { len: usize, max: usize },
    #[error("speaker vector has width {got}, expected {expected}")]
    SpeakerWidth { got: usize, expected: usize },
    #[error("context has a speaker slot but no {0} vector was given")]
    MissingSpeaker(&'static str),
    #[error("non-finite loss {loss} at step {step}; step aborted")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("finite-difference epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("generation limits must be at least 1")]
    Limits,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Interleave(#[from] InterleaveError),
    #[error(transparent)]
    Dialog(#[from] DialogError),
}
