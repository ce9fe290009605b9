//! Cloth-agnostic person representation.

use super::palette::{self, is_non_modifiable};
use super::raster::{dilate, Shape};
use super::{joint, GarmentCategory, Keypoint, LabelMap, Resolution, RgbImage, SampleRecord};

/// Gray written into masked pixels.
pub const MASK_FILL: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgnosticOptions {
    /// Chebyshev radius of the square dilation, in pixels.
    pub dilation_radius: usize,
    /// Half-thickness of the limb capsules drawn from the pose.
    pub limb_radius: f32,
    pub fill: f32,
}

impl AgnosticOptions {
    /// Radius 5 at 256 rows, scaled linearly with height.
    pub fn for_resolution(res: Resolution) -> Self {
        let scale = res.height as f32 / 256.0;
        Self {
            dilation_radius: ((5.0 * scale).round() as usize).max(1),
            limb_radius: (8.0 * scale).max(1.0),
            fill: MASK_FILL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgnosticPerson {
    pub masked_image: RgbImage,
    pub masked_parse: LabelMap,
    pub mask: Vec<bool>,
}

const ARM_BONES: [(usize, usize); 6] = [
    (joint::NECK, joint::R_SHOULDER),
    (joint::R_SHOULDER, joint::R_ELBOW),
    (joint::R_ELBOW, joint::R_WRIST),
    (joint::NECK, joint::L_SHOULDER),
    (joint::L_SHOULDER, joint::L_ELBOW),
    (joint::L_ELBOW, joint::L_WRIST),
];

const LEG_BONES: [(usize, usize); 5] = [
    (joint::R_HIP, joint::L_HIP),
    (joint::R_HIP, joint::R_KNEE),
    (joint::R_KNEE, joint::R_ANKLE),
    (joint::L_HIP, joint::L_KNEE),
    (joint::L_KNEE, joint::L_ANKLE),
];

const TORSO: [usize; 4] = [joint::R_SHOULDER, joint::L_SHOULDER, joint::L_HIP, joint::R_HIP];

/// Parse classes removed for a category. Dresses replace whatever covers the
/// upper and lower body.
pub fn masked_classes(category: GarmentCategory) -> &'static [u8] {
    use palette::*;
    match category {
        GarmentCategory::UpperBody => &[UPPER_CLOTHES],
        GarmentCategory::LowerBody => &[SKIRT, PANTS],
        GarmentCategory::Dresses => &[DRESS, UPPER_CLOTHES, SKIRT, PANTS],
    }
}

/// Region covered by the limbs that a garment of `category` anchors to.
pub fn limb_region(keypoints: &[Keypoint], category: GarmentCategory, res: Resolution, radius: f32) -> Vec<bool> {
    let mut mask = vec![false; res.pixels()];
    let (arms, legs) = match category {
        GarmentCategory::UpperBody => (true, false),
        GarmentCategory::LowerBody => (false, true),
        GarmentCategory::Dresses => (true, true),
    };
    let mut paint = |shape: Shape| shape.for_each_pixel(res, |y, x| mask[y * res.width + x] = true);
    let visible = |j: usize| keypoints.get(j).filter(|k| k.is_visible(res)).map(|k| [k.x, k.y]);
    let mut bones: Vec<(usize, usize)> = Vec::new();
    if arms {
        bones.extend_from_slice(&ARM_BONES);
    }
    if legs {
        bones.extend_from_slice(&LEG_BONES);
    }
    for (a, b) in bones {
        if let (Some(a), Some(b)) = (visible(a), visible(b)) {
            paint(Shape::Capsule { a, b, radius });
        }
    }
    if arms {
        let torso: Option<Vec<[f32; 2]>> = TORSO.iter().map(|&j| visible(j)).collect();
        if let Some(poly) = torso {
            paint(Shape::Polygon(poly));
        }
    }
    mask
}

/// Binary mask: dilate(garment region ∪ limb region) minus non-modifiable pixels.
pub fn agnostic_mask(
    parse: &LabelMap,
    keypoints: &[Keypoint],
    category: GarmentCategory,
    opts: &AgnosticOptions,
) -> Vec<bool> {
    let res = parse.resolution();
    let classes = masked_classes(category);
    let limbs = limb_region(keypoints, category, res, opts.limb_radius);
    let union: Vec<bool> = parse.data.iter().zip(&limbs).map(|(c, &l)| l || classes.contains(c)).collect();
    let dilated = dilate(&union, res, opts.dilation_radius);
    dilated.iter().zip(&parse.data).map(|(&m, &c)| m && !is_non_modifiable(c)).collect()
}

pub fn build_agnostic(record: &SampleRecord, category: GarmentCategory, opts: &AgnosticOptions) -> AgnosticPerson {
    build_agnostic_parts(&record.model_image, &record.parse, &record.keypoints, category, opts)
}

pub fn build_agnostic_parts(
    image: &RgbImage,
    parse: &LabelMap,
    keypoints: &[Keypoint],
    category: GarmentCategory,
    opts: &AgnosticOptions,
) -> AgnosticPerson {
    let mask = agnostic_mask(parse, keypoints, category, opts);
    let mut masked_image = image.clone();
    let mut masked_parse = parse.clone();
    for (p, &m) in mask.iter().enumerate() {
        if m {
            masked_image.data[p * 3..p * 3 + 3].fill(opts.fill);
            masked_parse.data[p] = palette::BACKGROUND;
        }
    }
    AgnosticPerson { masked_image, masked_parse, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NUM_KEYPOINTS;
    use proptest::prelude::*;

    fn no_pose() -> Vec<Keypoint> {
        vec![Keypoint::MISSING; NUM_KEYPOINTS]
    }

    fn opts(r: usize) -> AgnosticOptions {
        AgnosticOptions { dilation_radius: r, limb_radius: 2.0, fill: MASK_FILL }
    }

    #[test]
    fn empty_scope_leaves_image_untouched() {
        let res = Resolution::new(32, 24);
        let mut parse = LabelMap::filled(res, palette::BACKGROUND);
        parse.set(5, 5, palette::PANTS);
        let image = RgbImage::filled(res, [0.2, 0.3, 0.4]);
        let a = build_agnostic_parts(&image, &parse, &no_pose(), GarmentCategory::UpperBody, &opts(5));
        assert!(a.mask.iter().all(|&m| !m));
        assert_eq!(a.masked_image, image);
        assert_eq!(a.masked_parse, parse);
    }

    #[test]
    fn single_garment_pixel_dilates_to_square_minus_face() {
        let res = Resolution::new(40, 30);
        let mut parse = LabelMap::filled(res, palette::BACKGROUND);
        parse.set(20, 15, palette::UPPER_CLOTHES);
        for x in 10..=20 {
            parse.set(16, x, palette::FACE);
        }
        let a = agnostic_mask(&parse, &no_pose(), GarmentCategory::UpperBody, &opts(5));
        // Set-algebra oracle.
        let mut expected = vec![false; res.pixels()];
        for y in 15..=25 {
            for x in 10..=20 {
                expected[y * 30 + x] = parse.get(y, x) != palette::FACE;
            }
        }
        assert_eq!(a, expected);
        assert_eq!(a.iter().filter(|&&m| m).count(), 121 - 11);
    }

    #[test]
    fn masked_pixels_are_filled_and_backgrounded() {
        let res = Resolution::new(16, 12);
        let mut parse = LabelMap::filled(res, palette::TORSO_SKIN);
        parse.set(8, 6, palette::DRESS);
        let image = RgbImage::filled(res, [0.9, 0.1, 0.1]);
        let a = build_agnostic_parts(&image, &parse, &no_pose(), GarmentCategory::Dresses, &opts(1));
        for p in 0..res.pixels() {
            if a.mask[p] {
                assert_eq!(&a.masked_image.data[p * 3..p * 3 + 3], &[0.5, 0.5, 0.5]);
                assert_eq!(a.masked_parse.data[p], palette::BACKGROUND);
            } else {
                assert_eq!(a.masked_image.data[p * 3], 0.9);
            }
        }
        assert_eq!(a.mask.iter().filter(|&&m| m).count(), 9);
    }

    #[test]
    fn limb_region_follows_category() {
        let res = Resolution::new(64, 48);
        let mut kps = no_pose();
        kps[joint::R_HIP] = Keypoint::new(20.0, 36.0);
        kps[joint::R_KNEE] = Keypoint::new(20.0, 46.0);
        let parse = LabelMap::filled(res, palette::BACKGROUND);
        let up = agnostic_mask(&parse, &kps, GarmentCategory::UpperBody, &opts(1));
        let low = agnostic_mask(&parse, &kps, GarmentCategory::LowerBody, &opts(1));
        assert!(up.iter().all(|&m| !m));
        assert!(low[40 * 48 + 20]);
    }

    proptest! {
        #[test]
        fn never_masks_non_modifiable_and_monotone_in_radius(
            labels in proptest::collection::vec(0u8..18, 20 * 15),
            r in 0usize..4,
        ) {
            let parse = LabelMap { height: 20, width: 15, data: labels };
            for cat in GarmentCategory::ALL {
                let small = agnostic_mask(&parse, &no_pose(), cat, &opts(r));
                let big = agnostic_mask(&parse, &no_pose(), cat, &opts(r + 1));
                for p in 0..parse.data.len() {
                    if is_non_modifiable(parse.data[p]) {
                        prop_assert!(!small[p]);
                    }
                    prop_assert!(!small[p] || big[p]);
                }
            }
        }
    }
}
