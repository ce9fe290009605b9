//! Data model, on-disk adapter, synthetic corpus and input-representation builders.

pub mod agnostic;
pub mod layout;
pub mod palette;
pub mod pose;
pub mod raster;
pub mod split;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agnostic::{build_agnostic, AgnosticOptions, AgnosticPerson};
pub use layout::{load_dataset, DatasetStream, SplitKind};
pub use pose::{densepose_tensor, pose_heatmap, PoseMode, PoseTensor};
pub use split::{class_weights, unpair, ClassWeights, PairEntry, SplitSpec, UnpairedPair};
pub use synthetic::generate_synthetic;

pub const NUM_KEYPOINTS: usize = 18;
pub const NUM_DENSEPOSE_LABELS: usize = 25;
/// Joints reported with a lower confidence are treated as missing.
pub const KEYPOINT_CONFIDENCE_THRESHOLD: f32 = 0.1;

/// OpenPose COCO-18 joint order.
pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GarmentCategory {
    UpperBody,
    LowerBody,
    Dresses,
}

impl GarmentCategory {
    pub const ALL: [GarmentCategory; 3] = [Self::UpperBody, Self::LowerBody, Self::Dresses];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UpperBody => "upper_body",
            Self::LowerBody => "lower_body",
            Self::Dresses => "dresses",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Parse classes that hold a garment of this category.
    pub fn garment_classes(self) -> &'static [u8] {
        use palette::*;
        match self {
            Self::UpperBody => &[UPPER_CLOTHES],
            Self::LowerBody => &[SKIRT, PANTS],
            Self::Dresses => &[DRESS],
        }
    }
}

impl fmt::Display for GarmentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GarmentCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper_body" | "upper" | "0" => Ok(Self::UpperBody),
            "lower_body" | "lower" | "1" => Ok(Self::LowerBody),
            "dresses" | "dress" | "2" => Ok(Self::Dresses),
            other => Err(Error::Argument(format!("unknown garment category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const BASE: Resolution = Resolution { height: 256, width: 192 };
    pub const HD512: Resolution = Resolution { height: 512, width: 384 };
    pub const HD1024: Resolution = Resolution { height: 1024, width: 768 };

    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(self) -> usize {
        self.height * self.width
    }

    /// Height-to-width must be 4:3.
    pub fn validate(self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height * 3 != self.width * 4 {
            return Err(Error::Config(format!(
                "resolution {}x{} is not 4:3",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub confidence: f32,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, confidence: 0.0 };

    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y, confidence: 1.0 }
    }

    pub fn is_present(&self) -> bool {
        self.confidence >= KEYPOINT_CONFIDENCE_THRESHOLD && self.x.is_finite() && self.y.is_finite()
    }

    /// Present and inside an image of the given size.
    pub fn is_visible(&self, res: Resolution) -> bool {
        self.is_present()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x <= (res.width - 1) as f32
            && self.y <= (res.height - 1) as f32
    }
}

/// H×W×3 interleaved RGB in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn filled(res: Resolution, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(res.pixels() * 3);
        for _ in 0..res.pixels() {
            data.extend_from_slice(&rgb);
        }
        Self { height: res.height, width: res.width, data }
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-major copy (3×H×W).
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + p] = px[c];
            }
        }
        out
    }

    pub fn from_chw(res: Resolution, chw: &[f32]) -> Self {
        let n = res.pixels();
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = chw[c * n + p];
            }
        }
        Self { height: res.height, width: res.width, data }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size matches")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self { height: img.height() as usize, width: img.width() as usize, data }
    }
}

/// H×W single-channel integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn filled(res: Resolution, value: u8) -> Self {
        Self { height: res.height, width: res.width, data: vec![value; res.pixels()] }
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }
}

/// H×W×2 dense-pose UV coordinates in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct UvMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl UvMap {
    pub fn zeros(res: Resolution) -> Self {
        Self { height: res.height, width: res.width, data: vec![0.0; res.pixels() * 2] }
    }
}

/// One paired example: a person photo, the in-shop garment they wear and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub item_id: String,
    pub category: GarmentCategory,
    pub model_image: RgbImage,
    pub garment_image: RgbImage,
    pub keypoints: Vec<Keypoint>,
    pub densepose_labels: LabelMap,
    pub densepose_uv: UvMap,
    pub parse: LabelMap,
}

impl SampleRecord {
    pub fn resolution(&self) -> Resolution {
        self.model_image.resolution()
    }

    /// Checks every structural invariant of a record.
    pub fn validate(&self) -> Result<()> {
        let res = self.resolution();
        let same = |h: usize, w: usize| h == res.height && w == res.width;
        if !same(self.garment_image.height, self.garment_image.width)
            || !same(self.parse.height, self.parse.width)
            || !same(self.densepose_labels.height, self.densepose_labels.width)
            || !same(self.densepose_uv.height, self.densepose_uv.width)
        {
            return Err(Error::Shape(format!("item {}: spatial fields disagree", self.item_id)));
        }
        if self.keypoints.len() != NUM_KEYPOINTS {
            return Err(Error::Shape(format!(
                "item {}: expected {NUM_KEYPOINTS} keypoints, got {}",
                self.item_id,
                self.keypoints.len()
            )));
        }
        if let Some(&v) = self.parse.data.iter().find(|&&v| v as usize >= palette::NUM_CLASSES) {
            return Err(Error::InvalidParse { item_id: self.item_id.clone(), value: v });
        }
        if let Some(&v) = self.densepose_labels.data.iter().find(|&&v| v as usize >= NUM_DENSEPOSE_LABELS) {
            return Err(Error::InvalidDensePose { value: v });
        }
        for kp in &self.keypoints {
            if kp.is_present() && !kp.is_visible(res) {
                return Err(Error::Layout(format!(
                    "item {}: keypoint ({}, {}) outside image and not flagged missing",
                    self.item_id, kp.x, kp.y
                )));
            }
        }
        Ok(())
    }

    /// Binary mask of the pixels holding the garment of the record's category.
    pub fn garment_mask(&self) -> Vec<bool> {
        garment_mask(&self.parse, self.category)
    }
}

pub fn garment_mask(parse: &LabelMap, category: GarmentCategory) -> Vec<bool> {
    let classes = category.garment_classes();
    parse.data.iter().map(|v| classes.contains(v)).collect()
}
