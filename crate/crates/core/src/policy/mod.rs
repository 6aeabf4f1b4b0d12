//! Command-conditioned driving policy: architecture, losses and training.

pub mod augment;
pub mod check;
pub mod config;
pub mod driver;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{ControlMode, EncoderKind, LossMode, ModelConfig};
pub use driver::PolicyDriver;
pub use loss::{hloss, policy_loss, uloss, Targets, SPEED_LOSS_WEIGHT};
pub use model::{clip_controls, Batch, Forward, Mode, Policy, PredictedControls};
pub use train::{evaluate_loss, make_batch, train, train_on, zero_baseline_loss, EpochRecord, TrainOutcome};
