//! Per-sample network inputs and batching.

use candle_core::{DType, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::TrainStage;
use crate::dataset::agnostic::build_agnostic;
use crate::dataset::pose::pose_input;
use crate::dataset::{AgnosticOptions, AgnosticPerson, GarmentCategory, LabelMap, PoseMode, PoseTensor, RgbImage, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::{label_batch, one_hot_batch, pose_batch, rgb_batch};

/// Everything a training step needs from one record.
#[derive(Debug, Clone)]
pub struct Example {
    pub item_id: String,
    pub category: GarmentCategory,
    pub garment: RgbImage,
    /// Model photo restricted to the worn garment, zero elsewhere.
    pub cloth_target: RgbImage,
    pub model: RgbImage,
    pub agnostic: AgnosticPerson,
    pub pose: PoseTensor,
    pub parse: LabelMap,
}

pub fn cloth_target(record: &SampleRecord) -> RgbImage {
    let mut out = RgbImage::filled(record.resolution(), [0.0; 3]);
    for (p, &m) in record.garment_mask().iter().enumerate() {
        if m {
            out.data[p * 3..p * 3 + 3].copy_from_slice(&record.model_image.data[p * 3..p * 3 + 3]);
        }
    }
    out
}

impl Example {
    pub fn from_record(record: &SampleRecord, pose: PoseMode) -> Result<Self> {
        record.validate()?;
        let opts = AgnosticOptions::for_resolution(record.resolution());
        Ok(Self {
            item_id: record.item_id.clone(),
            category: record.category,
            garment: record.garment_image.clone(),
            cloth_target: cloth_target(record),
            model: record.model_image.clone(),
            agnostic: build_agnostic(record, record.category, &opts),
            pose: pose_input(pose, record)?,
            parse: record.parse.clone(),
        })
    }
}

pub fn prepare(records: &[SampleRecord], pose: PoseMode) -> Result<Vec<Example>> {
    if records.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    records.iter().map(|r| Example::from_record(r, pose)).collect()
}

/// Stacked tensors of a batch, all (B, C, H, W) except `labels` (B, H, W).
pub struct Batch {
    pub item_ids: Vec<String>,
    pub garment: Tensor,
    pub cloth_target: Tensor,
    pub model: Tensor,
    pub pose: Tensor,
    pub agnostic_image: Tensor,
    pub masked_parse: Tensor,
    pub parse: Tensor,
    pub labels: Tensor,
}

impl Batch {
    pub fn new(examples: &[&Example], dtype: DType) -> Result<Self> {
        let imgs = |f: fn(&Example) -> &RgbImage| rgb_batch(&examples.iter().map(|e| f(e)).collect::<Vec<_>>(), dtype);
        let parses: Vec<&LabelMap> = examples.iter().map(|e| &e.parse).collect();
        let masked: Vec<&LabelMap> = examples.iter().map(|e| &e.agnostic.masked_parse).collect();
        let poses: Vec<&PoseTensor> = examples.iter().map(|e| &e.pose).collect();
        Ok(Self {
            item_ids: examples.iter().map(|e| e.item_id.clone()).collect(),
            garment: imgs(|e| &e.garment)?,
            cloth_target: imgs(|e| &e.cloth_target)?,
            model: imgs(|e| &e.model)?,
            pose: pose_batch(&poses, dtype)?,
            agnostic_image: imgs(|e| &e.agnostic.masked_image)?,
            masked_parse: one_hot_batch(&masked, dtype)?,
            parse: one_hot_batch(&parses, dtype)?,
            labels: label_batch(&parses)?,
        })
    }

    /// Person representation of the warping module: agnostic image then pose.
    pub fn warp_person(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.agnostic_image, &self.pose], 1)?)
    }
}

/// Sample indices of one step, a pure function of the seed, stage and
/// iteration so resumed runs draw the same batches.
pub fn batch_indices(seed: u64, stage: TrainStage, iteration: u64, n: usize, batch: usize) -> Vec<usize> {
    let tag = match stage {
        TrainStage::Warp => 1u64,
        TrainStage::Parse => 2,
        TrainStage::Tryon => 3,
    };
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tag << 56) ^ iteration.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let drawn = sample(&mut rng, n, batch.min(n)).into_vec();
    (0..batch).map(|k| drawn[k % drawn.len()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::synthesize_corpus;
    use crate::dataset::Resolution;

    #[test]
    fn batch_shapes() {
        let recs = synthesize_corpus(1, Resolution::new(64, 48), 0).unwrap();
        let ex = prepare(&recs, PoseMode::Keypoints).unwrap();
        let refs: Vec<&Example> = ex.iter().collect();
        let b = Batch::new(&refs, DType::F32).unwrap();
        assert_eq!(b.garment.dims(), &[3, 3, 64, 48]);
        assert_eq!(b.warp_person().unwrap().dims(), &[3, 21, 64, 48]);
        assert_eq!(b.masked_parse.dims(), &[3, 18, 64, 48]);
        assert_eq!(b.labels.dims(), &[3, 64, 48]);
        let t: Vec<f32> = b.cloth_target.flatten_all().unwrap().to_vec1().unwrap();
        assert!(t.iter().any(|&v| v > 0.0));
        assert!(prepare(&[], PoseMode::Keypoints).is_err());
    }

    #[test]
    fn indices_are_reproducible() {
        let a = batch_indices(1, TrainStage::Warp, 5, 16, 4);
        assert_eq!(a, batch_indices(1, TrainStage::Warp, 5, 16, 4));
        assert_ne!(a, batch_indices(1, TrainStage::Parse, 5, 16, 4));
        assert!(a.iter().all(|&i| i < 16));
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 4);
        assert_eq!(batch_indices(0, TrainStage::Tryon, 0, 2, 5).len(), 5);
    }
}
