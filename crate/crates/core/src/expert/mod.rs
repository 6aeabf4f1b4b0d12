//! Scripted expert, demonstration collection and the dataset format.

pub mod collect;
pub mod controller;
pub mod dataset;
pub mod noise;

pub use collect::{collect, passes_quality_gate, record_expert_episode, CollectConfig, Recorder, SceneTally};
pub use controller::{expert_action, expert_action_with};
pub use dataset::{summarize, DataSplit, Dataset, Sample, SampleMeta, Summary, Trajectory, TrajectoryQuality};
pub use noise::inject_noise;
