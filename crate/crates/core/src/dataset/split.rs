//! Train/test split accounting, unpaired rearrangement and class frequencies.

use serde::{Deserialize, Serialize};

use super::palette::NUM_CLASSES;
use super::{GarmentCategory, LabelMap};
use crate::error::{Error, Result};

/// Training pairs per category in the full Dress Code release.
pub const DRESS_CODE_TRAIN: [usize; 3] = [13_563, 7_151, 27_678];
/// Test pairs per category in the full Dress Code release.
pub const DRESS_CODE_TEST: [usize; 3] = [1_800, 1_800, 1_800];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub model_id: String,
    pub garment_id: String,
    pub category: GarmentCategory,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<PairEntry>,
    pub test: Vec<PairEntry>,
}

fn per_category(entries: &[PairEntry]) -> [usize; 3] {
    let mut counts = [0; 3];
    for e in entries {
        counts[e.category.index()] += 1;
    }
    counts
}

impl SplitSpec {
    pub fn train_counts(&self) -> [usize; 3] {
        per_category(&self.train)
    }

    pub fn test_counts(&self) -> [usize; 3] {
        per_category(&self.test)
    }

    /// Verifies the split sizes of the full Dress Code release.
    pub fn check_dress_code(&self) -> Result<()> {
        let (train, test) = (self.train_counts(), self.test_counts());
        if train != DRESS_CODE_TRAIN || test != DRESS_CODE_TEST {
            return Err(Error::Layout(format!(
                "split counts train={train:?} (total {}) test={test:?} (total {}) do not match Dress Code \
                 train={DRESS_CODE_TRAIN:?} (48392) test={DRESS_CODE_TEST:?} (5400)",
                train.iter().sum::<usize>(),
                test.iter().sum::<usize>(),
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpairedPair {
    pub category: GarmentCategory,
    pub model_id: String,
    pub garment_id: String,
}

/// Within each category the model at position `i` receives the garment of
/// position `(i + 1) mod n`. Categories keep their order of first appearance.
pub fn unpair(test: &[PairEntry]) -> Vec<UnpairedPair> {
    let mut out = Vec::with_capacity(test.len());
    for cat in GarmentCategory::ALL {
        let items: Vec<&PairEntry> = test.iter().filter(|e| e.category == cat).collect();
        let n = items.len();
        for (i, e) in items.iter().enumerate() {
            out.push(UnpairedPair {
                category: cat,
                model_id: e.model_id.clone(),
                garment_id: items[(i + 1) % n].garment_id.clone(),
            });
        }
    }
    out
}

/// Inverse pixel-frequency weights over the 18 parse classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ClassWeights {
    /// `w_k = total / (18 · count_k)`; absent classes get 0. Uniform class
    /// frequencies therefore give unit weights.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.len() != NUM_CLASSES {
            return Err(Error::Shape(format!("expected {NUM_CLASSES} class counts, got {}", counts.len())));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Argument("class weights need at least one pixel".into()));
        }
        let weights = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { total as f64 / (NUM_CLASSES as f64 * c as f64) })
            .collect();
        Ok(Self { weights, counts: counts.to_vec() })
    }

    pub fn uniform() -> Self {
        Self { weights: vec![1.0; NUM_CLASSES], counts: vec![1; NUM_CLASSES] }
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }
}

pub fn class_weights<'a>(parses: impl IntoIterator<Item = &'a LabelMap>) -> Result<ClassWeights> {
    let mut counts = vec![0u64; NUM_CLASSES];
    for parse in parses {
        for &v in &parse.data {
            if v as usize >= NUM_CLASSES {
                return Err(Error::LabelOutOfRange { value: v as u32, classes: NUM_CLASSES });
            }
            counts[v as usize] += 1;
        }
    }
    ClassWeights::from_counts(&counts)
}
