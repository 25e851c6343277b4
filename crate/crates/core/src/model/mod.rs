//! The two-stream model: network, optimiser, training loop, rollout,
//! evaluation classifier and checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod export;
pub mod net;
pub mod rollout;
pub mod train;

pub use adam::Adam;
pub use checkpoint::{load_classifier, load_model, save_classifier, save_model, CheckpointMeta};
pub use classifier::{Classifier, ClassifierConfig};
pub use config::{teacher_forcing_prob, ModelConfig, OptimizerConfig, Schedule, TrainConfig};
pub use export::{encode_frame, export_frames};
pub use net::{FusionMode, Group, LstmState, ModelBundle, NextFrame, Seeds};
pub use rollout::{rollout, ContentMode, RolloutOptions};
pub use train::{copy_last_l2, evaluate_next_frame, NextFrameReport, Phase, StepReport, Trainer};
