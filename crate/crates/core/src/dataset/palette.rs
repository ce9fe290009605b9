//! The 18-class human-parsing palette.
//!
//! Class indices are fixed for the whole crate: the synthetic generator paints
//! with them, the parse network predicts them and the discriminator's first 18
//! channels follow the same order.

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 18;

pub const BACKGROUND: u8 = 0;
pub const HAIR: u8 = 1;
pub const FACE: u8 = 2;
pub const NECK: u8 = 3;
pub const LEFT_ARM: u8 = 4;
pub const RIGHT_ARM: u8 = 5;
pub const LEFT_LEG: u8 = 6;
pub const RIGHT_LEG: u8 = 7;
pub const TORSO_SKIN: u8 = 8;
pub const DRESS: u8 = 9;
pub const UPPER_CLOTHES: u8 = 10;
pub const SKIRT: u8 = 11;
pub const PANTS: u8 = 12;
pub const LEFT_SHOE: u8 = 13;
pub const RIGHT_SHOE: u8 = 14;
pub const LEFT_HAND: u8 = 15;
pub const RIGHT_HAND: u8 = 16;
pub const ACCESSORY: u8 = 17;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "hair",
    "face",
    "neck",
    "left_arm",
    "right_arm",
    "left_leg",
    "right_leg",
    "torso_skin",
    "dress",
    "upper_clothes",
    "skirt",
    "pants",
    "left_shoe",
    "right_shoe",
    "left_hand",
    "right_hand",
    "accessory",
];

/// Display colors used for palette-indexed PNGs.
pub const CLASS_COLORS: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [128, 0, 0],
    [254, 204, 153],
    [160, 120, 90],
    [0, 128, 255],
    [0, 64, 192],
    [128, 255, 0],
    [64, 192, 0],
    [255, 170, 120],
    [255, 0, 170],
    [255, 85, 0],
    [170, 0, 255],
    [0, 85, 85],
    [255, 255, 0],
    [192, 192, 0],
    [0, 255, 255],
    [0, 192, 192],
    [85, 51, 0],
];

/// Classes that are never masked out of the agnostic person representation.
pub const NON_MODIFIABLE: [u8; 7] = [HAIR, FACE, LEFT_HAND, RIGHT_HAND, LEFT_SHOE, RIGHT_SHOE, ACCESSORY];

pub fn is_non_modifiable(class: u8) -> bool {
    NON_MODIFIABLE.contains(&class)
}

/// Sidecar manifest written next to palette-indexed parse maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteManifest {
    pub classes: Vec<PaletteEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub index: u8,
    pub name: String,
    pub rgb: [u8; 3],
}

impl PaletteManifest {
    pub fn standard() -> Self {
        let classes = (0..NUM_CLASSES)
            .map(|i| PaletteEntry { index: i as u8, name: CLASS_NAMES[i].to_string(), rgb: CLASS_COLORS[i] })
            .collect();
        Self { classes }
    }
}
