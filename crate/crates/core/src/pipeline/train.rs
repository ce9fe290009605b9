//! Stage-wise training: warp, then parse, then try-on.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::Serialize;

use super::checkpoint::{
    read_meta, write_losses, write_meta, CheckpointMeta, LossRecord, RunDir, TrainStage, DIAGNOSTICS, DISC_OPTIMIZER,
    DISC_WEIGHTS, FORMAT_VERSION, OPTIMIZER, WEIGHTS,
};
use super::config::Config;
use super::data::{batch_indices, prepare, Batch, Example};
use super::models::{load_warp, DiscModel, ParseModel, TryOnModel, WarpModel, DTYPE};
use crate::adversarial::AdvMode;
use crate::dataset::{class_weights, SampleRecord};
use crate::error::{Error, Result};
use crate::geometry::{warp_loss, TpsWarper};
use crate::nn::{scalar, Adam, ParamStore};
use crate::parsing::parse_loss;
use crate::synthesis::{tryon_loss, PerceptualExtractor};

/// Seed offset of the frozen perceptual feature stack.
const PERCEPTUAL_SEED_SALT: u64 = 0x5eed_f00d;

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Continue from the stage's existing checkpoint.
    pub resume: bool,
    /// Overrides the schedule's iteration count for the stage.
    pub iterations: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: TrainStage,
    pub adv_mode: Option<AdvMode>,
    pub start_iteration: u64,
    /// Records of the steps run by this call.
    pub history: Vec<LossRecord>,
    pub dir: PathBuf,
}

impl StageOutcome {
    fn values(&self, term: &str) -> Vec<f64> {
        self.history.iter().filter_map(|r| if term == "total" { Some(r.total) } else { r.term(term) }).collect()
    }

    /// Mean of `term` over the first `k` recorded steps.
    pub fn initial_mean(&self, term: &str, k: usize) -> Option<f64> {
        let v = self.values(term);
        let n = k.min(v.len());
        (n > 0).then(|| v[..n].iter().sum::<f64>() / n as f64)
    }

    /// Mean of `term` over the last `k` recorded steps.
    pub fn final_mean(&self, term: &str, k: usize) -> Option<f64> {
        let v = self.values(term);
        let n = k.min(v.len());
        (n > 0).then(|| v[v.len() - n..].iter().sum::<f64>() / n as f64)
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.history.last()
    }
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    stage: TrainStage,
    adv_mode: Option<AdvMode>,
    iteration: u64,
    item_ids: &'a [String],
    record: &'a LossRecord,
    previous: Option<&'a LossRecord>,
}

fn loss_record(iteration: u64, total: &Tensor, terms: &[(&str, &Tensor)]) -> Result<LossRecord> {
    let mut map = BTreeMap::new();
    for (k, t) in terms {
        map.insert(k.to_string(), scalar(t)?);
    }
    Ok(LossRecord { iteration, total: scalar(total)?, terms: map })
}

/// Bookkeeping shared by the three stage loops.
struct Session {
    stage: TrainStage,
    adv_mode: Option<AdvMode>,
    dir: PathBuf,
    start: u64,
    end: u64,
    history: Vec<LossRecord>,
    log_every: u64,
}

impl Session {
    fn open(cfg: &Config, run: &RunDir, stage: TrainStage, mode: AdvMode, opts: &TrainOptions) -> Result<(Self, Option<CheckpointMeta>)> {
        let dir = run.stage_dir(stage, mode);
        let s = &cfg.schedule;
        let end = opts.iterations.unwrap_or(match stage {
            TrainStage::Warp => s.warp_iters,
            TrainStage::Parse => s.parse_iters,
            TrainStage::Tryon => s.tryon_iters,
        });
        let meta = if opts.resume {
            let meta = read_meta(&dir)?;
            super::models::check_compatible(stage, &meta.config, cfg)?;
            if meta.stage != stage || meta.seed != cfg.seed {
                return Err(Error::Config(format!("{} does not hold a resumable {stage} run with seed {}", dir.display(), cfg.seed)));
            }
            Some(meta)
        } else {
            None
        };
        let start = meta.as_ref().map_or(0, |m| m.iteration);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let adv_mode = (stage == TrainStage::Tryon).then_some(mode);
        Ok((Self { stage, adv_mode, dir, start, end, history: Vec::new(), log_every: s.log_every }, meta))
    }

    fn record(&mut self, rec: LossRecord, batch: &Batch) -> Result<()> {
        if !rec.is_finite() {
            let path = self.dir.join(DIAGNOSTICS);
            let diag = Diagnostics {
                stage: self.stage,
                adv_mode: self.adv_mode,
                iteration: rec.iteration,
                item_ids: &batch.item_ids,
                record: &rec,
                previous: self.history.last(),
            };
            fs::write(&path, serde_json::to_string_pretty(&diag)?).map_err(|e| Error::io(&path, e))?;
            return Err(Error::Numerical(format!(
                "{} loss is not finite at iteration {}; diagnostics written to {}",
                self.stage,
                rec.iteration,
                path.display()
            )));
        }
        if rec.iteration % self.log_every == 0 || rec.iteration + 1 == self.end {
            let terms: Vec<String> = rec.terms.iter().map(|(k, v)| format!("{k}={v:.5}")).collect();
            log::info!("{} iter {}/{} total={:.5} {}", self.stage, rec.iteration + 1, self.end, rec.total, terms.join(" "));
        }
        self.history.push(rec);
        Ok(())
    }

    fn finish(self, cfg: &Config, stores: &[(&ParamStore, &Adam, &str, &str)]) -> Result<StageOutcome> {
        for (store, adam, w, o) in stores {
            store.save(&self.dir.join(w))?;
            adam.save(&self.dir.join(o))?;
        }
        let iteration = self.start.max(self.start + self.history.len() as u64);
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            stage: self.stage,
            adv_mode: self.adv_mode,
            iteration,
            seed: cfg.seed,
            config: cfg.clone(),
            last: self.history.last().cloned(),
        };
        write_losses(&self.dir, &self.history, self.start > 0)?;
        write_meta(&self.dir, &meta)?;
        Ok(StageOutcome {
            stage: self.stage,
            adv_mode: self.adv_mode,
            start_iteration: self.start,
            history: self.history,
            dir: self.dir,
        })
    }
}

fn resume_into(dir: &Path, store: &ParamStore, adam: &mut Adam, w: &str, o: &str) -> Result<()> {
    store.load(&dir.join(w))?;
    adam.load(&dir.join(o))
}

/// θ and warped garment of every example from a frozen warping module.
pub fn frozen_warp(cfg: &Config, warp: &WarpModel, warper: &TpsWarper, examples: &[Example]) -> Result<Vec<(Tensor, Tensor)>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(cfg.schedule.batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let b = Batch::new(&refs, DTYPE)?;
        let theta = warp.net.forward(&b.garment, &b.warp_person()?, false)?.detach();
        let warped = warper.warp(&b.garment, &theta)?.detach();
        for i in 0..chunk.len() {
            out.push((theta.narrow(0, i, 1)?, warped.narrow(0, i, 1)?));
        }
    }
    Ok(out)
}

fn gather(cache: &[(Tensor, Tensor)], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let thetas: Vec<&Tensor> = idx.iter().map(|&i| &cache[i].0).collect();
    let warped: Vec<&Tensor> = idx.iter().map(|&i| &cache[i].1).collect();
    Ok((Tensor::cat(&thetas, 0)?, Tensor::cat(&warped, 0)?))
}

fn batch_at(examples: &[Example], idx: &[usize]) -> Result<Batch> {
    let refs: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
    Batch::new(&refs, DTYPE)
}

fn train_warp(cfg: &Config, examples: &[Example], run: &RunDir, opts: &TrainOptions) -> Result<StageOutcome> {
    let (mut session, meta) = Session::open(cfg, run, TrainStage::Warp, AdvMode::None, opts)?;
    let model = WarpModel::new(cfg)?;
    let mut adam = Adam::new(model.store.trainable(), cfg.schedule.adam());
    if meta.is_some() {
        resume_into(&session.dir, &model.store, &mut adam, WEIGHTS, OPTIMIZER)?;
    }
    let warper = TpsWarper::new();
    for it in session.start..session.end {
        let idx = batch_indices(cfg.seed, TrainStage::Warp, it, examples.len(), cfg.schedule.batch);
        let b = batch_at(examples, &idx)?;
        let theta = model.net.forward(&b.garment, &b.warp_person()?, true)?;
        let warped = warper.warp(&b.garment, &theta)?;
        let loss = warp_loss(&warped, &b.cloth_target, &theta, cfg.schedule.lambda_const)?;
        session.record(loss_record(it, &loss.total, &[("l1", &loss.l1), ("const", &loss.constraint)])?, &b)?;
        adam.step(&loss.total.backward()?)?;
    }
    session.finish(cfg, &[(&model.store, &adam, WEIGHTS, OPTIMIZER)])
}

fn train_parse(cfg: &Config, examples: &[Example], run: &RunDir, opts: &TrainOptions) -> Result<StageOutcome> {
    let warp = load_warp(cfg, run)?;
    let (mut session, meta) = Session::open(cfg, run, TrainStage::Parse, AdvMode::None, opts)?;
    let warper = TpsWarper::new();
    let cache = frozen_warp(cfg, &warp, &warper, examples)?;
    let model = ParseModel::new(cfg)?;
    let mut adam = Adam::new(model.store.trainable(), cfg.schedule.adam());
    if meta.is_some() {
        resume_into(&session.dir, &model.store, &mut adam, WEIGHTS, OPTIMIZER)?;
    }
    for it in session.start..session.end {
        let idx = batch_indices(cfg.seed, TrainStage::Parse, it, examples.len(), cfg.schedule.batch);
        let b = batch_at(examples, &idx)?;
        let (_, warped) = gather(&cache, &idx)?;
        let logits = model.net.forward(&warped, &b.pose, &b.masked_parse)?;
        let loss = parse_loss(&logits, &b.labels)?;
        session.record(loss_record(it, &loss, &[("ce", &loss)])?, &b)?;
        adam.step(&loss.backward()?)?;
    }
    session.finish(cfg, &[(&model.store, &adam, WEIGHTS, OPTIMIZER)])
}

fn train_tryon(cfg: &Config, examples: &[Example], run: &RunDir, mode: AdvMode, opts: &TrainOptions) -> Result<StageOutcome> {
    // The parse stage must exist even though training feeds ground-truth parses.
    read_meta(&run.stage_dir(TrainStage::Parse, mode))?;
    let warp = load_warp(cfg, run)?;
    let (mut session, meta) = Session::open(cfg, run, TrainStage::Tryon, mode, opts)?;
    let warper = TpsWarper::new();
    let cache = frozen_warp(cfg, &warp, &warper, examples)?;
    let gen = TryOnModel::new(cfg)?;
    let mut g_adam = Adam::new(gen.store.trainable(), cfg.schedule.adam());
    let disc = DiscModel::new(cfg, mode)?;
    let mut d_adam = disc.as_ref().map(|d| Adam::new(d.store.trainable(), cfg.schedule.adam()));
    if meta.is_some() {
        resume_into(&session.dir, &gen.store, &mut g_adam, WEIGHTS, OPTIMIZER)?;
        if let (Some(d), Some(a)) = (&disc, d_adam.as_mut()) {
            resume_into(&session.dir, &d.store, a, DISC_WEIGHTS, DISC_OPTIMIZER)?;
        }
    }
    let extractor = PerceptualExtractor::seeded(cfg.seed ^ PERCEPTUAL_SEED_SALT, DTYPE)?;
    let weights = class_weights(examples.iter().map(|e| &e.parse))?.weights;
    let lambda = cfg.schedule.lambda_adv;
    for it in session.start..session.end {
        let idx = batch_indices(cfg.seed, TrainStage::Tryon, it, examples.len(), cfg.schedule.batch);
        let b = batch_at(examples, &idx)?;
        let (theta, _) = gather(&cache, &idx)?;
        // Training conditions on the ground-truth parse.
        let fake = gen.net.forward(&b.garment, &b.pose, &b.agnostic_image, &b.parse, &theta, &warper)?;
        let mut d_loss = None;
        if let (Some(d), Some(a)) = (&disc, d_adam.as_mut()) {
            let l = d.net.d_loss(&b.model, &fake.detach(), &b.labels, &weights)?;
            let v = scalar(&l)?;
            if v.is_finite() {
                a.step(&l.backward()?)?;
            }
            d_loss = Some(l);
        }
        let adv = match &disc {
            Some(d) => Some(d.net.g_loss(&fake, &b.labels, &weights)?),
            None => None,
        };
        let loss = tryon_loss(&fake, &b.model, adv.as_ref(), lambda, &extractor)?;
        let mut terms = vec![("l1", &loss.l1), ("perceptual", &loss.perceptual)];
        if let Some(a) = &adv {
            terms.push(("adv", a));
        }
        if let Some(l) = &d_loss {
            terms.push(("disc", l));
        }
        session.record(loss_record(it, &loss.total, &terms)?, &b)?;
        g_adam.step(&loss.total.backward()?)?;
    }
    let mut stores = vec![(&gen.store, &g_adam, WEIGHTS, OPTIMIZER)];
    if let (Some(d), Some(a)) = (&disc, d_adam.as_ref()) {
        stores.push((&d.store, a, DISC_WEIGHTS, DISC_OPTIMIZER));
    }
    session.finish(cfg, &stores)
}

/// Trains one stage on `records` and writes its checkpoint under `run`.
/// Later stages load the frozen checkpoints of earlier ones; `mode` only
/// matters for the try-on stage.
pub fn train_stage(
    cfg: &Config,
    records: &[SampleRecord],
    run: &RunDir,
    stage: TrainStage,
    mode: AdvMode,
    opts: &TrainOptions,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if let Some(r) = records.iter().find(|r| r.resolution() != cfg.resolution) {
        return Err(Error::Config(format!(
            "record {} is {} but profile `{}` trains at {}",
            r.item_id,
            r.resolution(),
            cfg.profile,
            cfg.resolution
        )));
    }
    let examples = prepare(records, cfg.pose)?;
    match stage {
        TrainStage::Warp => train_warp(cfg, &examples, run, opts),
        TrainStage::Parse => train_parse(cfg, &examples, run, opts),
        TrainStage::Tryon => train_tryon(cfg, &examples, run, mode, opts),
    }
}
