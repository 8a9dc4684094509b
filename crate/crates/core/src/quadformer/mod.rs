//! Residue-window transformer detector trained with an alternating
//! min/max disparity objective.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod model;
pub mod score;
pub mod train;

pub use attention::{dcm_attention, tcd, tpc_matrix};
pub use config::{ModelConfig, ScoreRule, ThresholdPolicy};
pub use data::Standardizer;
pub use loss::{loss_parts, LossParts, Phase};
pub use model::{forward, Output, Weights};
pub use score::{quantile, window_scores, RawScores, ScoreSequence};
pub use train::{train, EpochLog, Quadformer, TrainingLog, Validation};
