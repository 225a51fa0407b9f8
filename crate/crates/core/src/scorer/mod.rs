//! Two-hop relevance scorer.
//!
//! A 1-hop candidate's embedding is concatenated with the mean of its own
//! neighbors' embeddings and projected (`ĥ = ReLU(W · [h ‖ mean])`), then a
//! two-layer MLP classifies `[ĥ ‖ q]` as irrelevant/relevant. The relevant
//! class probability is the candidate's score.

mod candidates;
mod model;
mod params;
mod train;

pub use candidates::{score_candidates, score_candidates_with, select_topk, ScoredCandidate};
pub use model::{aggregate, grad, loss, predict, score, softmax, Gradients, Prediction, LOG_CLAMP};
pub use params::{ScorerDims, ScorerParams};
pub use train::{accuracy, build_training_set, train, train_from, TrainConfig, TrainingExample, TrainingPair};

use thiserror::Error;

use crate::encoder::EncoderError;
use crate::kg::KgError;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}; parameters are likely corrupted")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("training pair {index}: answer {answer} is not a 1-hop neighbor of topic {topic}")]
    NotANeighbor {
        index: usize,
        topic: String,
        answer: String,
    },
    #[error("invalid parameter file: {0}")]
    Params(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] KgError),
}
