//! Networks paired with the parameter stores that own their weights.

use std::path::Path;

use candle_core::DType;

use super::checkpoint::{read_meta, CheckpointMeta, RunDir, TrainStage, WEIGHTS};
use super::config::Config;
use crate::adversarial::{AdvMode, Discriminator};
use crate::error::{Error, Result};
use crate::geometry::WarpNet;
use crate::nn::ParamStore;
use crate::parsing::ParseNet;
use crate::synthesis::TryOnNet;

pub const DTYPE: DType = DType::F32;

pub struct WarpModel {
    pub store: ParamStore,
    pub net: WarpNet,
}

impl WarpModel {
    pub fn new(cfg: &Config) -> Result<Self> {
        let store = ParamStore::new(cfg.seed, DTYPE);
        let net = WarpNet::new(&store.root().sub("warp"), cfg.warp, cfg.resolution)?;
        Ok(Self { store, net })
    }
}

pub struct ParseModel {
    pub store: ParamStore,
    pub net: ParseNet,
}

impl ParseModel {
    pub fn new(cfg: &Config) -> Result<Self> {
        let store = ParamStore::new(cfg.seed, DTYPE);
        let net = ParseNet::new(&store.root().sub("parse"), cfg.parse)?;
        Ok(Self { store, net })
    }
}

pub struct TryOnModel {
    pub store: ParamStore,
    pub net: TryOnNet,
}

impl TryOnModel {
    pub fn new(cfg: &Config) -> Result<Self> {
        let store = ParamStore::new(cfg.seed, DTYPE);
        let net = TryOnNet::new(&store.root().sub("tryon"), cfg.tryon)?;
        Ok(Self { store, net })
    }
}

pub struct DiscModel {
    pub store: ParamStore,
    pub net: Discriminator,
}

impl DiscModel {
    /// `None` for [`AdvMode::None`].
    pub fn new(cfg: &Config, mode: AdvMode) -> Result<Option<Self>> {
        let store = ParamStore::new(cfg.seed, DTYPE);
        let net = Discriminator::new(&store.root().sub("disc"), mode, cfg.disc)?;
        Ok(net.map(|net| Self { store, net }))
    }
}

/// Architecture-relevant parts of two configs agree.
pub fn check_compatible(stage: TrainStage, have: &Config, want: &Config) -> Result<()> {
    let same = have.resolution == want.resolution
        && have.pose == want.pose
        && match stage {
            TrainStage::Warp => have.warp == want.warp,
            TrainStage::Parse => have.parse == want.parse,
            TrainStage::Tryon => have.tryon == want.tryon && have.disc == want.disc,
        };
    if same {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{stage} checkpoint was trained with profile `{}` whose architecture differs from profile `{}`",
            have.profile, want.profile
        )))
    }
}

fn load_into(store: &ParamStore, dir: &Path, stage: TrainStage, cfg: &Config) -> Result<CheckpointMeta> {
    let meta = read_meta(dir)?;
    if meta.stage != stage {
        return Err(Error::Config(format!("{} holds a {} checkpoint, expected {stage}", dir.display(), meta.stage)));
    }
    check_compatible(stage, &meta.config, cfg)?;
    store.load(&dir.join(WEIGHTS))?;
    Ok(meta)
}

pub fn load_warp(cfg: &Config, run: &RunDir) -> Result<WarpModel> {
    let m = WarpModel::new(cfg)?;
    load_into(&m.store, &run.stage_dir(TrainStage::Warp, AdvMode::None), TrainStage::Warp, cfg)?;
    Ok(m)
}

pub fn load_parse(cfg: &Config, run: &RunDir) -> Result<ParseModel> {
    let m = ParseModel::new(cfg)?;
    load_into(&m.store, &run.stage_dir(TrainStage::Parse, AdvMode::None), TrainStage::Parse, cfg)?;
    Ok(m)
}

pub fn load_tryon(cfg: &Config, run: &RunDir, mode: AdvMode) -> Result<TryOnModel> {
    let m = TryOnModel::new(cfg)?;
    let meta = load_into(&m.store, &run.stage_dir(TrainStage::Tryon, mode), TrainStage::Tryon, cfg)?;
    if meta.adv_mode != Some(mode) {
        return Err(Error::Config(format!("try-on checkpoint was trained with {:?}, expected {mode}", meta.adv_mode)));
    }
    Ok(m)
}
