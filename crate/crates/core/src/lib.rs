//! Dysarthric speech intelligibility classification.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithm of the
//! pipeline: waveform decoding and resampling, a learnable Gabor/PCEN frontend
//! and a log-mel baseline, the time/frequency CNN classifier and its trainer,
//! shallow heads over pooled embeddings (logistic regression, LDA, random
//! forest), and the evaluation protocol (utterance metrics, speaker
//! aggregation, binarization, intelligibility mapping).
//!
//! File and process IO lives in the companion `spice` crate; the byte-level
//! container formats (SPCE, SPCK, SPFM, WAV) are encoded and decoded here so
//! that they can be tested without touching a filesystem.
//!
//! Optional features:
//! - `parallel`: evaluate per-utterance gradients with rayon (reduction order
//!   stays fixed, so results are bit-identical to the serial path).
//! - `serde`: derive `Serialize` for reports and manifest rows.
#![no_std]

extern crate alloc;

pub mod audio;
pub mod checkpoint;
mod codec;
pub mod cnn;
pub mod data;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod heads;
pub mod labels;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use labels::{ClassScores, IntelligibilityClass, Task};

/// Canonical internal sample rate in Hz.
pub const CANONICAL_RATE: u32 = 16_000;
