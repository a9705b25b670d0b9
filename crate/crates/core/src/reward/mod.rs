//! Preference-based reward learning from ranked trajectory snippets, with an
//! optional contrastive audio loss (CAL) on spoken yes/no annotations.

mod loss;
mod net;
mod train;

pub use loss::{
    cal_from_returns, cal_loss, combined_loss, loss_and_gradient, sim, trex_from_returns,
    trex_loss, CalBatch, LossParts, RankedPair, TempPool,
};
pub use net::RewardNet;
pub use train::{
    evaluate_reward, policy_from_reward, sample_ranked_pairs, train, LossPoint, PolicyScore,
    TrainConfig, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::prosody::Word;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("input has {got} features, network expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: trex {trex}, cal {cal}")]
    NonFinite {
        epoch: usize,
        step: usize,
        trex: f64,
        cal: f64,
    },
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

pub type Result<T> = std::result::Result<T, RewardError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnippetAudio {
    pub word: Word,
    pub pitch_mean: f64,
}

/// Contiguous run of state feature vectors with its hidden return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySnippet {
    pub states: Vec<Vec<f64>>,
    pub gt_return: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<SnippetAudio>,
}
