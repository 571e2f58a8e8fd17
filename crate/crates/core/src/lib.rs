//! Temporal sequence labeling for surgical-workflow-like data.
//!
//! * [`numkernel`]: matrices, stable reductions, seeded RNG, Adam, gradient checks.
//! * [`recurrent`]: LSTM / biLSTM encoders and the logit projection, with BPTT.
//! * [`crf`]: linear-chain CRF likelihood, gradients and Viterbi decoding.
//! * [`data`]: synthetic workflow datasets, dataset directories, split protocol.
//! * [`pipeline`]: model variants, training schedules, teacher annotation, experiment grid.
//! * [`evalreport`]: frame-level metrics, aggregation, TSV tables and SVG figures.

pub mod crf;
pub mod data;
pub mod error;
pub mod evalreport;
pub mod numkernel;
pub mod pipeline;
pub mod recurrent;

pub use error::{Error, Result};
