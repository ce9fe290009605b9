//! Discriminator ablation over shared warp and parse checkpoints.

use super::checkpoint::{dir_digest, read_meta, RunDir, TrainStage};
use super::config::Config;
use super::infer::{evaluate_protocol, Bundle};
use super::train::{train_stage, StageOutcome, TrainOptions};
use crate::adversarial::AdvMode;
use crate::dataset::{PairEntry, SampleRecord};
use crate::error::{Error, Result};
use crate::metrics::{ComparisonReport, EmbeddingBackend};

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub comparison: ComparisonReport,
    pub warp_digest: String,
    pub parse_digest: String,
    /// Stages trained by this call, in order.
    pub trained: Vec<StageOutcome>,
}

fn checkpoint_matches(cfg: &Config, run: &RunDir, stage: TrainStage) -> bool {
    read_meta(&run.stage_dir(stage, AdvMode::None))
        .is_ok_and(|m| m.config == *cfg && m.iteration >= if stage == TrainStage::Warp { cfg.schedule.warp_iters } else { cfg.schedule.parse_iters })
}

/// Trains warp and parse once (reusing finished checkpoints of the same
/// config), then one try-on stage per mode, and evaluates each mode on the
/// test split. Fails if any try-on run changed the shared checkpoint bytes.
pub fn ablate(
    cfg: &Config,
    train: &[SampleRecord],
    test: &[SampleRecord],
    test_entries: &[PairEntry],
    run: &RunDir,
    modes: &[AdvMode],
    backend: &dyn EmbeddingBackend,
) -> Result<AblationOutcome> {
    if modes.is_empty() {
        return Err(Error::Argument("ablation needs at least one discriminator mode".into()));
    }
    let mut trained = Vec::new();
    for stage in [TrainStage::Warp, TrainStage::Parse] {
        if !checkpoint_matches(cfg, run, stage) {
            trained.push(train_stage(cfg, train, run, stage, AdvMode::None, &TrainOptions::default())?);
        }
    }
    let warp_dir = run.stage_dir(TrainStage::Warp, AdvMode::None);
    let parse_dir = run.stage_dir(TrainStage::Parse, AdvMode::None);
    let warp_digest = dir_digest(&warp_dir)?;
    let parse_digest = dir_digest(&parse_dir)?;
    let mut reports = Vec::new();
    for &mode in modes {
        trained.push(train_stage(cfg, train, run, TrainStage::Tryon, mode, &TrainOptions::default())?);
        let bundle = Bundle::load(run, mode)?;
        reports.push((mode.as_str().to_string(), evaluate_protocol(&bundle, test, test_entries, backend, cfg.seed)?));
        if dir_digest(&warp_dir)? != warp_digest || dir_digest(&parse_dir)? != parse_digest {
            return Err(Error::Layout(format!("training the {mode} try-on stage modified the shared warp/parse checkpoints")));
        }
    }
    Ok(AblationOutcome { comparison: ComparisonReport::new(reports)?, warp_digest, parse_digest, trained })
}
