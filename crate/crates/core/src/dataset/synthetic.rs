//! Procedural stand-in corpus with exact annotations.
//!
//! Every item is a front-facing figure built from capsules, ellipses and
//! polygons placed from sampled keypoints. The try-on garment is drawn flat in
//! its own frame and reappears on the figure through an affine map, so the
//! garment-to-body correspondence is exactly representable by a TPS warp.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{write_dataset, SplitKind};
use super::palette::*;
use super::raster::Shape;
use super::split::PairEntry;
use super::{joint, GarmentCategory, Keypoint, LabelMap, Resolution, RgbImage, SampleRecord, UvMap, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Canonical joint positions as fractions of (width, height).
const CANONICAL_POSE: [[f32; 2]; NUM_KEYPOINTS] = [
    [0.50, 0.12], // nose
    [0.50, 0.20], // neck
    [0.36, 0.22], // right shoulder
    [0.29, 0.38], // right elbow
    [0.27, 0.52], // right wrist
    [0.64, 0.22], // left shoulder
    [0.71, 0.38], // left elbow
    [0.73, 0.52], // left wrist
    [0.42, 0.52], // right hip
    [0.42, 0.72], // right knee
    [0.42, 0.91], // right ankle
    [0.58, 0.52], // left hip
    [0.58, 0.72], // left knee
    [0.58, 0.91], // left ankle
    [0.47, 0.10], // right eye
    [0.53, 0.10], // left eye
    [0.44, 0.11], // right ear
    [0.56, 0.11], // left ear
];

/// Flat garment outlines in the unit garment frame.
const TSHIRT: [[f32; 2]; 12] = [
    [0.38, 0.08], [0.62, 0.08], [0.80, 0.14], [0.97, 0.36], [0.84, 0.44], [0.78, 0.32],
    [0.78, 0.95], [0.22, 0.95], [0.22, 0.32], [0.16, 0.44], [0.03, 0.36], [0.20, 0.14],
];
const TROUSERS: [[f32; 2]; 7] = [
    [0.22, 0.04], [0.78, 0.04], [0.84, 0.96], [0.56, 0.96], [0.50, 0.34], [0.44, 0.96], [0.16, 0.96],
];
const SKIRT_OUTLINE: [[f32; 2]; 4] = [[0.30, 0.06], [0.70, 0.06], [0.90, 0.92], [0.10, 0.92]];
const DRESS_OUTLINE: [[f32; 2]; 8] = [
    [0.38, 0.04], [0.62, 0.04], [0.74, 0.12], [0.70, 0.40], [0.90, 0.96], [0.10, 0.96], [0.30, 0.40], [0.26, 0.12],
];

/// Fraction of the garment image left empty around the garment frame.
const GARMENT_MARGIN: f32 = 0.08;

/// 2-D affine map `p ↦ M·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f32; 2]; 2],
    pub t: [f32; 2],
}

impl Affine2 {
    pub fn apply(&self, p: [f32; 2]) -> [f32; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }

    pub fn then(&self, next: &Affine2) -> Affine2 {
        let a = &next.m;
        let b = &self.m;
        Affine2 {
            m: [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ],
            t: next.apply(self.t),
        }
    }

    pub fn inverse(&self) -> Affine2 {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let m = [[d / det, -b / det], [-c / det, a / det]];
        let t = [-(m[0][0] * self.t[0] + m[0][1] * self.t[1]), -(m[1][0] * self.t[0] + m[1][1] * self.t[1])];
        Affine2 { m, t }
    }

    /// Maps the unit square onto the axis-aligned box `[x0, x1] × [y0, y1]`.
    pub fn unit_to_box(x0: f32, y0: f32, x1: f32, y1: f32) -> Affine2 {
        Affine2 { m: [[x1 - x0, 0.0], [0.0, y1 - y0]], t: [x0, y0] }
    }
}

/// Low-frequency two-color stripe texture defined in the garment frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripeTexture {
    pub a: [f32; 3],
    pub b: [f32; 3],
    pub frequency: f32,
    pub angle: f32,
    pub phase: f32,
}

impl StripeTexture {
    pub fn sample(&self, u: f32, v: f32) -> [f32; 3] {
        let (s, c) = self.angle.sin_cos();
        let t = 0.5 + 0.5 * (std::f32::consts::TAU * self.frequency * (u * c + v * s) + self.phase).sin();
        [0, 1, 2].map(|i| quantize(self.a[i] * (1.0 - t) + self.b[i] * t))
    }
}

/// Rounds to the 8-bit grid so PNG round trips are exact.
fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn quantize_rgb(c: [f32; 3]) -> [f32; 3] {
    c.map(quantize)
}

/// Everything drawn for one item, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct Figure {
    pub keypoints: Vec<Keypoint>,
    /// Shapes in painting order; later shapes overwrite earlier ones.
    pub shapes: Vec<(u8, Shape)>,
    /// Garment frame → model pixel coordinates.
    pub garment_to_model: Affine2,
    /// Garment frame → garment image pixel coordinates.
    pub garment_to_flat: Affine2,
    pub texture: StripeTexture,
    pub garment_class: u8,
    pub garment_outline: Vec<[f32; 2]>,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn outline_for(category: GarmentCategory, rng: &mut ChaCha8Rng) -> (u8, Vec<[f32; 2]>) {
    match category {
        GarmentCategory::UpperBody => (UPPER_CLOTHES, TSHIRT.to_vec()),
        GarmentCategory::LowerBody => {
            if rng.random_bool(0.5) {
                (PANTS, TROUSERS.to_vec())
            } else {
                (SKIRT, SKIRT_OUTLINE.to_vec())
            }
        }
        GarmentCategory::Dresses => (DRESS, DRESS_OUTLINE.to_vec()),
    }
}

/// Body-frame box (fractions of width/height) that a garment frame maps onto.
fn body_box(class: u8) -> [f32; 4] {
    match class {
        UPPER_CLOTHES => [0.22, 0.17, 0.78, 0.58],
        PANTS => [0.33, 0.50, 0.67, 0.93],
        SKIRT => [0.30, 0.50, 0.70, 0.78],
        _ => [0.27, 0.17, 0.73, 0.80],
    }
}

/// Draws one item. `index` only feeds the item id.
pub fn synthesize_item(category: GarmentCategory, item_id: String, res: Resolution, rng: &mut ChaCha8Rng) -> (SampleRecord, Figure) {
    let (w, h) = ((res.width - 1) as f32, (res.height - 1) as f32);
    let to_px = Affine2 { m: [[w, 0.0], [0.0, h]], t: [0.0, 0.0] };

    // Global placement in pixel space: scale and rotate about the center, then shift.
    let scale: f32 = rng.random_range(0.86..1.0);
    let angle: f32 = rng.random_range(-0.06..0.06);
    let shift = [rng.random_range(-0.05..0.05) * w, rng.random_range(-0.025..0.025) * h];
    let (s, c) = angle.sin_cos();
    let center = [w / 2.0, h / 2.0];
    let m = [[scale * c, -scale * s], [scale * s, scale * c]];
    let rot = Affine2 { m, t: [0.0, 0.0] };
    let moved = rot.apply(center);
    let global = Affine2 { m, t: [center[0] - moved[0] + shift[0], center[1] - moved[1] + shift[1]] };
    let body = to_px.then(&global);

    let mut pose = CANONICAL_POSE;
    for j in [joint::R_ELBOW, joint::R_WRIST, joint::L_ELBOW, joint::L_WRIST] {
        pose[j][0] += rng.random_range(-0.025..0.025);
        pose[j][1] += rng.random_range(-0.025..0.025);
    }
    let keypoints: Vec<Keypoint> = pose
        .iter()
        .map(|p| {
            let q = body.apply(*p);
            Keypoint::new(q[0].clamp(0.0, w), q[1].clamp(0.0, h))
        })
        .collect();
    let kp = |j: usize| [keypoints[j].x, keypoints[j].y];

    let skin = random_color(rng, 0.55, 0.85);
    let hair_color = random_color(rng, 0.05, 0.3);
    let shoe_color = random_color(rng, 0.05, 0.35);
    let background = random_color(rng, 0.86, 0.98);
    let other_garment = random_color(rng, 0.15, 0.6);
    let texture = StripeTexture {
        a: random_color(rng, 0.05, 0.95),
        b: random_color(rng, 0.05, 0.95),
        frequency: rng.random_range(1.2..2.5),
        angle: rng.random_range(0.0..std::f32::consts::PI),
        phase: rng.random_range(0.0..std::f32::consts::TAU),
    };

    let (garment_class, outline) = outline_for(category, rng);
    let widen: f32 = rng.random_range(-0.02..0.02);
    let [bx0, by0, bx1, by1] = body_box(garment_class);
    let garment_to_model = Affine2::unit_to_box(bx0 - widen, by0, bx1 + widen, by1).then(&body);
    let garment_to_flat = Affine2::unit_to_box(GARMENT_MARGIN, GARMENT_MARGIN, 1.0 - GARMENT_MARGIN, 1.0 - GARMENT_MARGIN).then(&to_px);

    // The complementary garment worn by the figure (plain color).
    let companion: Option<(u8, Vec<[f32; 2]>)> = match category {
        GarmentCategory::UpperBody => Some((PANTS, TROUSERS.to_vec())),
        GarmentCategory::LowerBody => Some((UPPER_CLOTHES, TSHIRT.to_vec())),
        GarmentCategory::Dresses => None,
    };

    let limb = 0.05 * w;
    let mut shapes: Vec<(u8, Shape)> = Vec::new();
    let cap = |a, b, radius| Shape::Capsule { a, b, radius };
    shapes.push((RIGHT_LEG, cap(kp(joint::R_HIP), kp(joint::R_KNEE), limb * 1.2)));
    shapes.push((RIGHT_LEG, cap(kp(joint::R_KNEE), kp(joint::R_ANKLE), limb)));
    shapes.push((LEFT_LEG, cap(kp(joint::L_HIP), kp(joint::L_KNEE), limb * 1.2)));
    shapes.push((LEFT_LEG, cap(kp(joint::L_KNEE), kp(joint::L_ANKLE), limb)));
    let foot = |p: [f32; 2]| Shape::Ellipse { center: [p[0], p[1] + 0.02 * h], rx: 0.05 * w, ry: 0.025 * h };
    shapes.push((RIGHT_SHOE, foot(kp(joint::R_ANKLE))));
    shapes.push((LEFT_SHOE, foot(kp(joint::L_ANKLE))));
    shapes.push((
        TORSO_SKIN,
        Shape::Polygon(vec![kp(joint::R_SHOULDER), kp(joint::L_SHOULDER), kp(joint::L_HIP), kp(joint::R_HIP)]),
    ));
    shapes.push((RIGHT_ARM, cap(kp(joint::R_SHOULDER), kp(joint::R_ELBOW), limb)));
    shapes.push((RIGHT_ARM, cap(kp(joint::R_ELBOW), kp(joint::R_WRIST), limb * 0.85)));
    shapes.push((LEFT_ARM, cap(kp(joint::L_SHOULDER), kp(joint::L_ELBOW), limb)));
    shapes.push((LEFT_ARM, cap(kp(joint::L_ELBOW), kp(joint::L_WRIST), limb * 0.85)));
    let map_outline = |outline: &[[f32; 2]], a: &Affine2| outline.iter().map(|p| a.apply(*p)).collect::<Vec<_>>();
    let mut garment_layers = Vec::new();
    if let Some((cls, out)) = &companion {
        let [x0, y0, x1, y1] = body_box(*cls);
        let a = Affine2::unit_to_box(x0, y0, x1, y1).then(&body);
        garment_layers.push((*cls, Shape::Polygon(map_outline(out, &a))));
    }
    garment_layers.push((garment_class, Shape::Polygon(map_outline(&outline, &garment_to_model))));
    // Lower garments go under upper ones.
    garment_layers.sort_by_key(|(cls, _)| if *cls == PANTS || *cls == SKIRT { 0 } else { 1 });
    shapes.extend(garment_layers);
    let hand = |p: [f32; 2]| Shape::Ellipse { center: p, rx: 0.04 * w, ry: 0.025 * h };
    shapes.push((RIGHT_HAND, hand(kp(joint::R_WRIST))));
    shapes.push((LEFT_HAND, hand(kp(joint::L_WRIST))));
    shapes.push((NECK, cap(kp(joint::NECK), kp(joint::NOSE), 0.035 * w)));
    let head = kp(joint::NOSE);
    shapes.push((HAIR, Shape::Ellipse { center: [head[0], head[1] - 0.025 * h], rx: 0.085 * w, ry: 0.06 * h }));
    shapes.push((FACE, Shape::Ellipse { center: head, rx: 0.065 * w, ry: 0.045 * h }));

    // Paint parse map, then colors from the parse map.
    let mut parse = LabelMap::filled(res, BACKGROUND);
    for (cls, shape) in &shapes {
        shape.for_each_pixel(res, |y, x| parse.set(y, x, *cls));
    }
    let to_garment = garment_to_model.inverse();
    let mut model_image = RgbImage::filled(res, quantize_rgb(background));
    for y in 0..res.height {
        for x in 0..res.width {
            let color = match parse.get(y, x) {
                BACKGROUND => continue,
                HAIR => hair_color,
                RIGHT_SHOE | LEFT_SHOE => shoe_color,
                cls if cls == garment_class => {
                    let g = to_garment.apply([x as f32, y as f32]);
                    texture.sample(g[0], g[1])
                }
                UPPER_CLOTHES | PANTS | SKIRT | DRESS => other_garment,
                _ => skin,
            };
            model_image.set_pixel(y, x, quantize_rgb(color));
        }
    }

    // Flat garment on a black background.
    let flat_outline = Shape::Polygon(map_outline(&outline, &garment_to_flat));
    let from_flat = garment_to_flat.inverse();
    let mut garment_image = RgbImage::filled(res, [0.0; 3]);
    flat_outline.for_each_pixel(res, |y, x| {
        let g = from_flat.apply([x as f32, y as f32]);
        garment_image.set_pixel(y, x, texture.sample(g[0], g[1]));
    });

    let (densepose_labels, densepose_uv) = dense_pose(&keypoints, res, limb);

    let record = SampleRecord {
        item_id,
        category,
        model_image,
        garment_image,
        keypoints: keypoints.clone(),
        densepose_labels,
        densepose_uv,
        parse,
    };
    let figure = Figure { keypoints, shapes, garment_to_model, garment_to_flat, texture, garment_class, garment_outline: outline };
    (record, figure)
}

/// Body-surface labels (front-facing parts of the 24-part scheme) and UVs.
fn dense_pose(keypoints: &[Keypoint], res: Resolution, limb: f32) -> (LabelMap, UvMap) {
    let kp = |j: usize| [keypoints[j].x, keypoints[j].y];
    let q16 = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0;
    let mut labels = LabelMap::filled(res, 0);
    let mut uv = UvMap::zeros(res);
    let bones: [(u8, usize, usize); 10] = [
        (9, joint::R_HIP, joint::R_KNEE),
        (10, joint::L_HIP, joint::L_KNEE),
        (13, joint::R_KNEE, joint::R_ANKLE),
        (14, joint::L_KNEE, joint::L_ANKLE),
        (16, joint::R_SHOULDER, joint::R_ELBOW),
        (15, joint::L_SHOULDER, joint::L_ELBOW),
        (20, joint::R_ELBOW, joint::R_WRIST),
        (19, joint::L_ELBOW, joint::L_WRIST),
        (3, joint::R_WRIST, joint::R_WRIST),
        (4, joint::L_WRIST, joint::L_WRIST),
    ];
    let torso = Shape::Polygon(vec![kp(joint::R_SHOULDER), kp(joint::L_SHOULDER), kp(joint::L_HIP), kp(joint::R_HIP)]);
    let (tx0, ty0) = (kp(joint::R_SHOULDER)[0], kp(joint::R_SHOULDER)[1]);
    let (tw, th) = ((kp(joint::L_SHOULDER)[0] - tx0).max(1.0), (kp(joint::R_HIP)[1] - ty0).max(1.0));
    torso.for_each_pixel(res, |y, x| {
        let p = y * res.width + x;
        labels.data[p] = 2;
        uv.data[2 * p] = q16((x as f32 - tx0) / tw);
        uv.data[2 * p + 1] = q16((y as f32 - ty0) / th);
    });
    for (label, a, b) in bones {
        let (pa, pb) = (kp(a), kp(b));
        let radius = if a == b { limb * 1.1 } else { limb };
        let shape = Shape::Capsule { a: pa, b: pb, radius };
        let d = [pb[0] - pa[0], pb[1] - pa[1]];
        let len2 = (d[0] * d[0] + d[1] * d[1]).max(1e-6);
        shape.for_each_pixel(res, |y, x| {
            let p = y * res.width + x;
            let r = [x as f32 - pa[0], y as f32 - pa[1]];
            let t = (r[0] * d[0] + r[1] * d[1]) / len2;
            let cross = (r[0] * d[1] - r[1] * d[0]) / len2.sqrt();
            labels.data[p] = label;
            uv.data[2 * p] = q16(t);
            uv.data[2 * p + 1] = q16(0.5 + cross / (2.0 * radius));
        });
    }
    let head = kp(joint::NOSE);
    let head_shape = Shape::Ellipse { center: head, rx: 0.065 * res.width as f32, ry: 0.045 * res.height as f32 };
    head_shape.for_each_pixel(res, |y, x| {
        let p = y * res.width + x;
        labels.data[p] = if (x as f32) < head[0] { 23 } else { 24 };
        uv.data[2 * p] = q16(0.5 + (x as f32 - head[0]) / (0.13 * res.width as f32));
        uv.data[2 * p + 1] = q16(0.5 + (y as f32 - head[1]) / (0.09 * res.height as f32));
    });
    (labels, uv)
}

/// Per-item generator: stream `(category, index)` of the seeded ChaCha sequence.
pub fn item_rng(seed: u64, category: GarmentCategory, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((category.index() as u64) << 32 | index as u64);
    rng
}

/// In-memory corpus of `n` items per category, ordered by category.
pub fn synthesize_corpus(n: usize, res: Resolution, seed: u64) -> Result<Vec<SampleRecord>> {
    if n == 0 {
        return Err(Error::Argument("synthetic corpus needs n >= 1 items per category".into()));
    }
    res.validate()?;
    let mut out = Vec::with_capacity(3 * n);
    for cat in GarmentCategory::ALL {
        for i in 0..n {
            let id = format!("{:06}", cat.index() * n + i);
            let mut rng = item_rng(seed, cat, i);
            out.push(synthesize_item(cat, id, res, &mut rng).0);
        }
    }
    Ok(out)
}

/// Writes a synthetic corpus of `n` items per category under `out` using the
/// repository's dataset layout. Every item is listed in both the train and the
/// test split: desk-scale runs evaluate on their training pairs.
pub fn generate_synthetic(n: usize, res: Resolution, seed: u64, out: &Path) -> Result<PathBuf> {
    let records = synthesize_corpus(n, res, seed)?;
    let pairs: Vec<PairEntry> = records
        .iter()
        .map(|r| PairEntry { model_id: r.item_id.clone(), garment_id: r.item_id.clone(), category: r.category })
        .collect();
    write_dataset(out, res, &records, &[(SplitKind::Train, pairs.clone()), (SplitKind::Test, pairs)])?;
    Ok(out.to_path_buf())
}
