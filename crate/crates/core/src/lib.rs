//! Interleaved text / multi-codebook audio sequence modeling at desk scale.
//!
//! The crate covers the token space, n:m interleaving, the per-codebook
//! delay pattern, the hybrid loss, a small trainable decoder with a unified
//! first head plus one head per remaining codebook, multi-turn context
//! assembly, a full-duplex turn-taking state machine, sequence packing, and
//! the evaluation metrics used to compare generated speech.

pub mod delay;
pub mod corpus;
pub mod dialog;
pub mod duplex;
pub mod metrics;
pub mod interleaver;
pub mod loss;
pub mod model;
pub mod synthetic;
pub mod cli;
pub mod token_space;

pub use delay::{apply_delay, invert_delay, DelayGrid};
pub use interleaver::{deinterleave, interleave, HybridSeq, InterleaveConfig};
pub use loss::{hybrid_nll, LossMask, PositionPrediction};
pub use token_space::{HybridToken, Modality, VocabSpec};
