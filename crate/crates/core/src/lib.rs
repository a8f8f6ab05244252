//! Explainable temporal recommender core.
//!
//! Latent user and item states evolve through per-epoch LSTM chains and
//! combine with stationary embeddings for rating prediction. Training
//! jointly optimizes rating accuracy and a neighbourhood-based
//! explainability alignment, with two flavours of the alignment weight:
//! a constant one and an exponentially decaying one that favours recent
//! evidence. Evaluation covers RMSE, ranking metrics, and the
//! explainability precision/recall pair, plus epoch-bucketed explanation
//! evidence for individual recommendations.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
