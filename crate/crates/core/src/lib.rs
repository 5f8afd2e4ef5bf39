//! Next-utterance ranking for multi-turn dialog.
//!
//! Builds (context, response, flag) training data from dialogs, trains
//! dual-encoder scorers `σ(cᵀ M r + b)` over CNN, LSTM or Bi-LSTM sentence
//! encoders, scores a TF-IDF cosine baseline, and evaluates everything with
//! 1-in-n Recall@k, including prediction-averaging ensembles.

pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod numerics;
pub mod ranking;
pub mod scorer;
pub mod text;
pub mod training;

pub use error::{Error, Result};
