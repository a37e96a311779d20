//! Word-level LSTM language models for sentence completion and message-reply
//! prediction, personalised with three transfer-learning schemes, plus a
//! word-distribution style metric and a modified Kneser-Ney baseline.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod netcore;
pub mod ngram;
pub mod transfer;

pub use error::{Error, Result};
