//! Training orchestration, inference and evaluation drivers.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod infer;
pub mod models;
pub mod train;

pub use ablate::{ablate, AblationOutcome};
pub use checkpoint::{tryon_home, CheckpointMeta, LossRecord, RunDir, TrainStage, HOME_ENV};
pub use config::{Config, TrainSchedule};
pub use infer::{
    evaluate, evaluate_protocol, multi_garment, tryon_once, Bundle, MultiGarmentResult, NoProbe, ParseSource, Probe, ProbeEvent,
    TryOnResult,
};
pub use train::{train_stage, StageOutcome, TrainOptions};
