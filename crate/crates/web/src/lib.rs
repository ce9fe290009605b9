//! Browser demo: a TPS warp explorer and an agnostic mask / pose explorer
//! over procedurally generated samples.

use tryon_core::dataset::agnostic::{build_agnostic, AgnosticOptions};
use tryon_core::dataset::palette::CLASS_COLORS;
use tryon_core::dataset::pose::pose_heatmap;
use tryon_core::dataset::synthetic::{item_rng, synthesize_item};
use tryon_core::dataset::{GarmentCategory, Resolution, RgbImage, SampleRecord};
use tryon_core::geometry::tps::{anchor_lattice, tps_grid_with, LATTICE};
use tryon_core::geometry::{sample_bilinear, second_order_constraint, TpsBasis, TpsParams};
use wasm_bindgen::prelude::*;

fn category(index: u32) -> Result<GarmentCategory, JsError> {
    GarmentCategory::ALL.get(index as usize).copied().ok_or_else(|| JsError::new("category index must be 0, 1 or 2"))
}

fn sample(seed: u64, category: GarmentCategory, height: usize, width: usize) -> Result<SampleRecord, JsError> {
    if height < 16 || width < 12 {
        return Err(JsError::new("canvas must be at least 16x12"));
    }
    let mut rng = item_rng(seed, category, 0);
    Ok(synthesize_item(category, format!("demo-{seed}"), Resolution::new(height, width), &mut rng).0)
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.height * img.width * 4);
    for px in img.data.chunks_exact(3) {
        out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out.push(255);
    }
    out
}

/// Drag anchors of the 5×5 lattice and watch a garment follow the spline.
#[wasm_bindgen]
pub struct WarpExplorer {
    garment: RgbImage,
    basis: TpsBasis,
    params: TpsParams,
    show_grid: bool,
}

#[wasm_bindgen]
impl WarpExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, category_index: u32, height: usize, width: usize) -> Result<WarpExplorer, JsError> {
        let garment = sample(seed, category(category_index)?, height, width)?.garment_image;
        Ok(Self { garment, basis: TpsBasis::new(), params: TpsParams::zero(), show_grid: true })
    }

    pub fn reset(&mut self) {
        self.params = TpsParams::zero();
    }

    pub fn set_show_grid(&mut self, on: bool) {
        self.show_grid = on;
    }

    /// Moves anchor `(row, col)` so that its target sits at pixel `(x, y)`.
    pub fn move_anchor(&mut self, row: usize, col: usize, x: f64, y: f64) -> Result<(), JsError> {
        let k = anchor_index(row, col).ok_or_else(|| JsError::new("anchor index out of range"))?;
        let a = anchor_lattice()[k];
        let nx = 2.0 * x / (self.garment.width - 1) as f64 - 1.0;
        let ny = 2.0 * y / (self.garment.height - 1) as f64 - 1.0;
        self.params.set(row, col, (nx - a[0]) as f32, (ny - a[1]) as f32);
        Ok(())
    }

    /// Anchor targets in pixels, `[x0, y0, x1, y1, ...]` row-major.
    pub fn anchors(&self) -> Vec<f64> {
        let (w, h) = ((self.garment.width - 1) as f64, (self.garment.height - 1) as f64);
        self.params.targets().iter().flat_map(|t| [(t[0] + 1.0) * 0.5 * w, (t[1] + 1.0) * 0.5 * h]).collect()
    }

    /// Bending penalty of the current lattice; zero for any affine pose.
    pub fn bending(&self) -> f64 {
        second_order_constraint(&self.params)
    }

    pub fn theta_text(&self) -> String {
        self.params.to_text()
    }

    /// Warped garment as RGBA bytes.
    pub fn render(&self) -> Result<Vec<u8>, JsError> {
        let res = self.garment.resolution();
        let grid = tps_grid_with(&self.basis, &self.params, res).map_err(|e| JsError::new(&e.to_string()))?;
        let mut source = self.garment.clone();
        if self.show_grid {
            draw_source_grid(&mut source);
        }
        let chw = sample_bilinear(&source.to_chw(), 3, res, &grid);
        Ok(rgba(&RgbImage::from_chw(res, &chw)))
    }
}

fn anchor_index(row: usize, col: usize) -> Option<usize> {
    (row < LATTICE && col < LATTICE).then_some(row * LATTICE + col)
}

/// Thin lines every eighth of the image, so the deformation stays visible on flat regions.
fn draw_source_grid(img: &mut RgbImage) {
    let (h, w) = (img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            if (x * 8) % w < 8 || (y * 8) % h < 8 {
                img.set_pixel(y, x, [0.1, 0.1, 0.1]);
            }
        }
    }
}

/// Layers of the agnostic explorer.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Model = 0,
    Parse = 1,
    Agnostic = 2,
    MaskOverlay = 3,
    Pose = 4,
}

/// Shows what the person representation hides for each garment category.
#[wasm_bindgen]
pub struct AgnosticExplorer {
    seed: u64,
    record: SampleRecord,
    target: GarmentCategory,
    opts: AgnosticOptions,
}

#[wasm_bindgen]
impl AgnosticExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, height: usize, width: usize) -> Result<AgnosticExplorer, JsError> {
        let record = sample(seed, GarmentCategory::Dresses, height, width)?;
        let opts = AgnosticOptions::for_resolution(record.resolution());
        Ok(Self { seed, record, target: GarmentCategory::UpperBody, opts })
    }

    /// Regenerates the person wearing a garment of the given category.
    pub fn set_wearing(&mut self, category_index: u32) -> Result<(), JsError> {
        let res = self.record.resolution();
        self.record = sample(self.seed, category(category_index)?, res.height, res.width)?;
        Ok(())
    }

    /// Category of the garment to be tried on, which decides the mask.
    pub fn set_target(&mut self, category_index: u32) -> Result<(), JsError> {
        self.target = category(category_index)?;
        Ok(())
    }

    pub fn set_dilation(&mut self, radius: usize) {
        self.opts.dilation_radius = radius;
    }

    pub fn set_limb_radius(&mut self, radius: f32) {
        self.opts.limb_radius = radius.max(0.0);
    }

    /// Fraction of pixels hidden by the mask.
    pub fn masked_fraction(&self) -> f64 {
        let mask = build_agnostic(&self.record, self.target, &self.opts).mask;
        mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
    }

    pub fn render(&self, layer: Layer) -> Vec<u8> {
        render_layer(&self.record, self.target, &self.opts, layer)
    }
}

fn render_layer(record: &SampleRecord, target: GarmentCategory, opts: &AgnosticOptions, layer: Layer) -> Vec<u8> {
    let res = record.resolution();
    match layer {
        Layer::Model => rgba(&record.model_image),
        Layer::Parse => record
            .parse
            .data
            .iter()
            .flat_map(|&c| {
                let [r, g, b] = CLASS_COLORS[c as usize];
                [r, g, b, 255]
            })
            .collect(),
        Layer::Agnostic => rgba(&build_agnostic(record, target, opts).masked_image),
        Layer::MaskOverlay => {
            let mask = build_agnostic(record, target, opts).mask;
            let mut img = record.model_image.clone();
            for (p, &m) in mask.iter().enumerate() {
                if m {
                    let px = &mut img.data[p * 3..p * 3 + 3];
                    px[0] = 0.5 * px[0] + 0.5;
                    px[1] *= 0.5;
                    px[2] *= 0.5;
                }
            }
            rgba(&img)
        }
        Layer::Pose => {
            let pose = pose_heatmap(&record.keypoints, res);
            let mut img = record.model_image.clone();
            for c in 0..pose.channels {
                let hue = c as f32 / pose.channels as f32;
                let color = [hue, 1.0 - hue, 0.5 + 0.5 * (hue - 0.5).abs()];
                for (p, &v) in pose.channel(c).iter().enumerate() {
                    if v > 0.0 {
                        img.data[p * 3..p * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
            rgba(&img)
        }
    }
}
