//! Inference with a trained bundle, multi-garment composition and evaluation.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use candle_core::Tensor;

use super::checkpoint::{read_meta, RunDir, TrainStage};
use super::config::Config;
use super::models::{load_parse, load_tryon, load_warp, ParseModel, TryOnModel, WarpModel, DTYPE};
use crate::adversarial::AdvMode;
use crate::dataset::agnostic::build_agnostic_parts;
use crate::dataset::pose::pose_input;
use crate::dataset::{unpair, AgnosticOptions, GarmentCategory, LabelMap, PairEntry, RgbImage, SampleRecord};
use crate::error::{Error, Result};
use crate::geometry::TpsWarper;
use crate::metrics::{evaluate_images, EmbeddingBackend, EvalMode, EvalSample, MetricReport};
use crate::nn::{argmax_labels, one_hot_batch, pose_batch, rgb_batch, tensor_to_rgb};

/// The three trained modules plus the warper.
pub struct Bundle {
    pub config: Config,
    pub adv_mode: AdvMode,
    pub warp: WarpModel,
    pub parse: ParseModel,
    pub tryon: TryOnModel,
    pub warper: TpsWarper,
}

impl Bundle {
    /// Loads the warp, parse and `mode` try-on checkpoints of `run`. The
    /// config is taken from the try-on checkpoint.
    pub fn load(run: &RunDir, mode: AdvMode) -> Result<Self> {
        let meta = read_meta(&run.stage_dir(TrainStage::Tryon, mode))?;
        let config = meta.config;
        Ok(Self {
            warp: load_warp(&config, run)?,
            parse: load_parse(&config, run)?,
            tryon: load_tryon(&config, run, mode)?,
            warper: TpsWarper::new(),
            adv_mode: mode,
            config,
        })
    }
}

/// Where a parse map fed to a module came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseSource {
    GroundTruth,
    Predicted,
}

/// Instrumentation hooks fired during inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeEvent {
    AgnosticBuilt { pass: usize, category: GarmentCategory, parse_digest: u64 },
    ParsePredicted { pass: usize, parse_digest: u64 },
    GeneratorParse { pass: usize, source: ParseSource, parse_digest: u64 },
}

pub trait Probe {
    fn event(&mut self, e: ProbeEvent);
}

/// Ignores every event.
pub struct NoProbe;

impl Probe for NoProbe {
    fn event(&mut self, _: ProbeEvent) {}
}

impl Probe for Vec<ProbeEvent> {
    fn event(&mut self, e: ProbeEvent) {
        self.push(e);
    }
}

pub fn parse_digest(parse: &LabelMap) -> u64 {
    let mut h = DefaultHasher::new();
    (parse.height, parse.width, &parse.data).hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone)]
pub struct TryOnResult {
    pub image: RgbImage,
    /// Predicted parse h̃ of the person wearing the new garment.
    pub parse: LabelMap,
    pub theta: Vec<f32>,
}

fn pass(bundle: &Bundle, person: &SampleRecord, garment: &RgbImage, category: GarmentCategory, pass: usize, probe: &mut dyn Probe) -> Result<TryOnResult> {
    let cfg = &bundle.config;
    let res = cfg.resolution;
    if person.resolution() != res || garment.resolution() != res {
        return Err(Error::Shape(format!(
            "person {} and garment {} must match the profile resolution {res}",
            person.resolution(),
            garment.resolution()
        )));
    }
    let opts = AgnosticOptions::for_resolution(res);
    let agnostic = build_agnostic_parts(&person.model_image, &person.parse, &person.keypoints, category, &opts);
    probe.event(ProbeEvent::AgnosticBuilt { pass, category, parse_digest: parse_digest(&person.parse) });
    let pose = pose_input(cfg.pose, person)?;
    let g = rgb_batch(&[garment], DTYPE)?;
    let p = pose_batch(&[&pose], DTYPE)?;
    let a = rgb_batch(&[&agnostic.masked_image], DTYPE)?;
    let theta = bundle.warp.net.forward(&g, &Tensor::cat(&[&a, &p], 1)?, false)?;
    let warped = bundle.warper.warp(&g, &theta)?;
    let masked = one_hot_batch(&[&agnostic.masked_parse], DTYPE)?;
    let logits = bundle.parse.net.forward(&warped, &p, &masked)?;
    let predicted = argmax_labels(&logits)?.remove(0);
    let digest = parse_digest(&predicted);
    probe.event(ProbeEvent::ParsePredicted { pass, parse_digest: digest });
    let h = one_hot_batch(&[&predicted], DTYPE)?;
    probe.event(ProbeEvent::GeneratorParse { pass, source: ParseSource::Predicted, parse_digest: digest });
    let out = bundle.tryon.net.forward(&g, &p, &a, &h, &theta, &bundle.warper)?;
    Ok(TryOnResult { image: tensor_to_rgb(&out, 0)?, parse: predicted, theta: theta.flatten_all()?.to_vec1()? })
}

/// Dresses `person` in `garment` of `category`.
pub fn tryon_once(bundle: &Bundle, person: &SampleRecord, garment: &RgbImage, category: GarmentCategory, probe: &mut dyn Probe) -> Result<TryOnResult> {
    pass(bundle, person, garment, category, 1, probe)
}

#[derive(Debug, Clone)]
pub struct MultiGarmentResult {
    pub upper: TryOnResult,
    pub lower: TryOnResult,
}

/// Upper-body garment first, then the lower-body garment on the result. The
/// second pass masks the person using the parse predicted by the first.
pub fn multi_garment(
    bundle: &Bundle,
    person: &SampleRecord,
    upper: (&RgbImage, GarmentCategory),
    lower: (&RgbImage, GarmentCategory),
    probe: &mut dyn Probe,
) -> Result<MultiGarmentResult> {
    if upper.1 != GarmentCategory::UpperBody || lower.1 != GarmentCategory::LowerBody {
        return Err(Error::Argument(format!(
            "multi-garment try-on needs an upper_body then a lower_body garment, got {} and {}",
            upper.1, lower.1
        )));
    }
    let first = pass(bundle, person, upper.0, upper.1, 1, probe)?;
    let dressed = SampleRecord { model_image: first.image.clone(), parse: first.parse.clone(), ..person.clone() };
    let second = pass(bundle, &dressed, lower.0, lower.1, 2, probe)?;
    Ok(MultiGarmentResult { upper: first, lower: second })
}

/// Generations for a test split. `records[i]` must be the record of `entries[i]`.
pub fn generate_split(bundle: &Bundle, records: &[SampleRecord], entries: &[PairEntry], mode: EvalMode) -> Result<Vec<(GarmentCategory, RgbImage, usize)>> {
    if records.len() != entries.len() {
        return Err(Error::Argument(format!("{} records for {} pair entries", records.len(), entries.len())));
    }
    let mut out = Vec::with_capacity(records.len());
    match mode {
        EvalMode::Paired => {
            for (i, r) in records.iter().enumerate() {
                out.push((r.category, tryon_once(bundle, r, &r.garment_image, r.category, &mut NoProbe)?.image, i));
            }
        }
        EvalMode::Unpaired => {
            let by_model: HashMap<(&str, GarmentCategory), usize> =
                entries.iter().enumerate().map(|(i, e)| ((e.model_id.as_str(), e.category), i)).collect();
            let by_garment: HashMap<(&str, GarmentCategory), usize> =
                entries.iter().enumerate().map(|(i, e)| ((e.garment_id.as_str(), e.category), i)).collect();
            for p in unpair(entries) {
                let m = by_model[&(p.model_id.as_str(), p.category)];
                let g = by_garment[&(p.garment_id.as_str(), p.category)];
                let img = tryon_once(bundle, &records[m], &records[g].garment_image, p.category, &mut NoProbe)?.image;
                out.push((p.category, img, m));
            }
        }
    }
    Ok(out)
}

/// Metrics of `bundle` on a test split in one setting.
pub fn evaluate(
    bundle: &Bundle,
    records: &[SampleRecord],
    entries: &[PairEntry],
    mode: EvalMode,
    backend: &dyn EmbeddingBackend,
    seed: u64,
) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    let generated = generate_split(bundle, records, entries, mode)?;
    let samples: Vec<EvalSample<'_>> = generated
        .iter()
        .map(|(category, img, m)| EvalSample { category: *category, generated: img, real: &records[*m].model_image })
        .collect();
    evaluate_images(&samples, mode, backend, seed)
}

/// Paired SSIM combined with unpaired FID, KID and IS.
pub fn evaluate_protocol(
    bundle: &Bundle,
    records: &[SampleRecord],
    entries: &[PairEntry],
    backend: &dyn EmbeddingBackend,
    seed: u64,
) -> Result<MetricReport> {
    let paired = evaluate(bundle, records, entries, EvalMode::Paired, backend, seed)?;
    let unpaired = evaluate(bundle, records, entries, EvalMode::Unpaired, backend, seed)?;
    MetricReport::merge_protocol(&paired, &unpaired)
}
