//! Adaptive mixtures of an n-gram and a neural language model.
//!
//! The crate trains two experts (a modified Kneser-Ney back-off model and a
//! word-level LSTM), then fits a tiny gating network over handcrafted context
//! features that decides, per time step, how much weight each expert gets:
//!
//! ```text
//! P_ens(w | c) = λ(c) · P_nn(w | c) + (1 − λ(c)) · P_ng(w | c)
//! ```
//!
//! Module map:
//! - [`corpus`]: tokenization, vocabulary and deterministic splits.
//! - [`ngram`]: counting, Kneser-Ney estimation, back-off queries, ARPA I/O.
//! - [`neural`]: LSTM language model with exact BPTT and full softmax.
//! - [`gating`]: context features, normalization, LIN/MLP/LSTM gates.
//! - [`ensemble`]: mixtures, static λ tuning, perplexity and reports.
//! - [`analysis`]: frequency bins, capitalization statistics, t-tests.
//! - [`config`] and [`pipeline`]: declarative end-to-end runs.

pub mod analysis;
pub mod config;
pub mod container;
pub mod corpus;
pub mod ensemble;
mod error;
pub mod gating;
pub mod neural;
pub mod ngram;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
