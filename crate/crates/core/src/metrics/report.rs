//! Per-category metric tables.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::backend::EmbeddingBackend;
use super::distance::{fid, kid};
use super::inception::{default_splits, inception_score_with_splits};
use super::ssim::ssim;
use crate::dataset::{GarmentCategory, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Paired,
    Unpaired,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Paired => "paired",
            EvalMode::Unpaired => "unpaired",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(EvalMode::Paired),
            "unpaired" => Ok(EvalMode::Unpaired),
            _ => Err(Error::Argument(format!("unknown eval mode {s:?} (expected paired or unpaired)"))),
        }
    }
}

/// One generated image with the real photo it is compared against. In paired
/// mode `real` is the ground truth; in unpaired mode it only contributes to the
/// real feature distribution.
pub struct EvalSample<'a> {
    pub category: GarmentCategory,
    pub generated: &'a RgbImage,
    pub real: &'a RgbImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub count: usize,
    pub ssim: Option<f64>,
    pub fid: Option<f64>,
    pub kid: Option<f64>,
    pub is: Option<f64>,
}

impl MetricRow {
    fn empty(label: &str) -> Self {
        Self { label: label.to_string(), count: 0, ssim: None, fid: None, kid: None, is: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub backend: String,
    pub backend_hash: String,
    /// Provenance of each column, e.g. "paired" or "paired ssim + unpaired fid/kid/is".
    pub protocol: String,
    pub rows: Vec<MetricRow>,
}

pub const ALL_LABEL: &str = "All";

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn write_table(f: &mut fmt::Formatter<'_>, first: &str, rows: &[MetricRow]) -> fmt::Result {
    writeln!(f, "{first:<14} {:>6} {:>8} {:>10} {:>10} {:>8}", "n", "SSIM↑", "FID↓", "KID↓", "IS↑")?;
    for r in rows {
        writeln!(
            f,
            "{:<14} {:>6} {:>8} {:>10} {:>10} {:>8}",
            r.label,
            r.count,
            fmt_opt(r.ssim, 4),
            fmt_opt(r.fid, 4),
            fmt_opt(r.kid, 6),
            fmt_opt(r.is, 4)
        )?;
    }
    Ok(())
}

impl MetricReport {
    pub fn row(&self, label: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn overall(&self) -> &MetricRow {
        self.row(ALL_LABEL).expect("report always carries an All row")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SSIM from `paired`, distribution metrics from `unpaired`.
    pub fn merge_protocol(paired: &MetricReport, unpaired: &MetricReport) -> Result<MetricReport> {
        if paired.backend_hash != unpaired.backend_hash {
            return Err(Error::Argument("reports were computed with different backends".into()));
        }
        let rows = unpaired
            .rows
            .iter()
            .map(|u| MetricRow { ssim: paired.row(&u.label).and_then(|p| p.ssim), ..u.clone() })
            .collect();
        Ok(MetricReport {
            backend: unpaired.backend.clone(),
            backend_hash: unpaired.backend_hash.clone(),
            protocol: "paired ssim + unpaired fid/kid/is".into(),
            rows,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backend {} ({})", self.backend, &self.backend_hash[..self.backend_hash.len().min(16)])?;
        writeln!(f, "protocol {}", self.protocol)?;
        write_table(f, "category", &self.rows)
    }
}

/// Overall rows of several reports side by side, one per labelled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub backend: String,
    pub backend_hash: String,
    pub rows: Vec<MetricRow>,
    pub reports: Vec<(String, MetricReport)>,
}

impl ComparisonReport {
    pub fn new(reports: Vec<(String, MetricReport)>) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::Argument("nothing to compare".into()))?;
        let (backend, backend_hash) = (first.1.backend.clone(), first.1.backend_hash.clone());
        if reports.iter().any(|(_, r)| r.backend_hash != backend_hash) {
            return Err(Error::Argument("reports were computed with different backends".into()));
        }
        let rows = reports.iter().map(|(name, r)| MetricRow { label: name.clone(), ..r.overall().clone() }).collect();
        Ok(Self { backend, backend_hash, rows, reports })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backend {} ({})", self.backend, &self.backend_hash[..self.backend_hash.len().min(16)])?;
        write_table(f, "discriminator", &self.rows)
    }
}

fn row_for(label: &str, samples: &[&EvalSample<'_>], with_ssim: bool, backend: &dyn EmbeddingBackend, seed: u64) -> Result<MetricRow> {
    let mut row = MetricRow::empty(label);
    row.count = samples.len();
    if samples.is_empty() {
        return Ok(row);
    }
    if with_ssim {
        let mut total = 0.0;
        for s in samples {
            total += ssim(s.generated, s.real)?;
        }
        row.ssim = Some(total / samples.len() as f64);
    }
    let generated: Vec<&RgbImage> = samples.iter().map(|s| s.generated).collect();
    let real: Vec<&RgbImage> = samples.iter().map(|s| s.real).collect();
    let probs: DMatrix<f64> = backend.classify(&generated)?;
    row.is = Some(inception_score_with_splits(&probs, default_splits(probs.nrows(), probs.ncols()))?);
    if samples.len() >= 2 {
        let (fg, fr) = (backend.embed(&generated)?, backend.embed(&real)?);
        row.fid = Some(fid(&fr, &fg)?);
        row.kid = Some(kid(&fr, &fg, seed)?);
    }
    Ok(row)
}

/// Metrics per garment category plus an "All" row over the union. SSIM is
/// computed only in paired mode; FID and KID need two samples per row.
pub fn evaluate_images(samples: &[EvalSample<'_>], mode: EvalMode, backend: &dyn EmbeddingBackend, seed: u64) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    let with_ssim = mode == EvalMode::Paired;
    let mut rows = Vec::new();
    for cat in GarmentCategory::ALL {
        let subset: Vec<&EvalSample<'_>> = samples.iter().filter(|s| s.category == cat).collect();
        rows.push(row_for(cat.as_str(), &subset, with_ssim, backend, seed)?);
    }
    let all: Vec<&EvalSample<'_>> = samples.iter().collect();
    rows.push(row_for(ALL_LABEL, &all, with_ssim, backend, seed)?);
    Ok(MetricReport {
        backend: backend.name().to_string(),
        backend_hash: backend.hash().to_string(),
        protocol: mode.as_str().to_string(),
        rows,
    })
}
