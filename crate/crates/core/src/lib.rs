//! Forward-error-correction laboratory: rate-1/2 convolutional codes over a
//! BPSK/AWGN channel, an exact Viterbi baseline, and a U-Net decoder that
//! treats decoding as per-cell segmentation of a codeword grid.

pub mod channel;
pub mod coding;
pub mod config;
pub mod error;
pub mod gridmap;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod viterbi;

pub use error::{CheckpointError, ConfigError, Error, Result};
