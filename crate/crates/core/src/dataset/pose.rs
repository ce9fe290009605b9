use serde::{Deserialize, Serialize};

use super::{Keypoint, LabelMap, Resolution, UvMap, NUM_DENSEPOSE_LABELS, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Side of the square drawn for every keypoint.
pub const HEATMAP_BLOCK: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    #[default]
    Keypoints,
    Densepose,
}

impl PoseMode {
    pub fn channels(self) -> usize {
        match self {
            PoseMode::Keypoints => NUM_KEYPOINTS,
            PoseMode::Densepose => NUM_DENSEPOSE_LABELS + 2,
        }
    }
}

/// Channel-major pose representation (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PoseTensor {
    pub fn zeros(channels: usize, res: Resolution) -> Self {
        Self { channels, height: res.height, width: res.width, data: vec![0.0; channels * res.pixels()] }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// 18-channel binary heatmap: one 11×11 block of ones per present keypoint,
/// centered on the rounded keypoint position and clipped at the borders.
pub fn pose_heatmap(keypoints: &[Keypoint], res: Resolution) -> PoseTensor {
    let mut out = PoseTensor::zeros(NUM_KEYPOINTS, res);
    let half = (HEATMAP_BLOCK / 2) as isize;
    for (k, kp) in keypoints.iter().take(NUM_KEYPOINTS).enumerate() {
        if !kp.is_visible(res) {
            continue;
        }
        let cx = kp.x.round() as isize;
        let cy = kp.y.round() as isize;
        let w = res.width as isize;
        let h = res.height as isize;
        let ch = out.channel_mut(k);
        for y in (cy - half).max(0)..=(cy + half).min(h - 1) {
            for x in (cx - half).max(0)..=(cx + half).min(w - 1) {
                ch[(y * w + x) as usize] = 1.0;
            }
        }
    }
    out
}

/// 25 one-hot label planes followed by the U and V planes.
pub fn densepose_tensor(labels: &LabelMap, uv: &UvMap) -> Result<PoseTensor> {
    if labels.height != uv.height || labels.width != uv.width {
        return Err(Error::Shape("dense-pose labels and UV map differ in size".into()));
    }
    let res = labels.resolution();
    let n = res.pixels();
    let mut out = PoseTensor::zeros(NUM_DENSEPOSE_LABELS + 2, res);
    for (p, &l) in labels.data.iter().enumerate() {
        if l as usize >= NUM_DENSEPOSE_LABELS {
            return Err(Error::InvalidDensePose { value: l });
        }
        out.data[l as usize * n + p] = 1.0;
        out.data[NUM_DENSEPOSE_LABELS * n + p] = uv.data[2 * p];
        out.data[(NUM_DENSEPOSE_LABELS + 1) * n + p] = uv.data[2 * p + 1];
    }
    Ok(out)
}

/// Pose input for the configured mode.
pub fn pose_input(mode: PoseMode, record: &super::SampleRecord) -> Result<PoseTensor> {
    match mode {
        PoseMode::Keypoints => Ok(pose_heatmap(&record.keypoints, record.resolution())),
        PoseMode::Densepose => densepose_tensor(&record.densepose_labels, &record.densepose_uv),
    }
}
