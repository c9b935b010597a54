//! Consistency and reliability scores, plus the confidence-only baselines,
//! per image and averaged per dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{FinalPrediction, ImageRecord, PostProcess};
use crate::error::{Error, Result};
use crate::geometry::{center_closeness, iou, merge_boxes};

/// Score hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcrParams {
    /// Confidence threshold `c`.
    pub c: f64,
    /// Negative sigmoid scale for the consistency weight.
    pub k_c: f64,
    /// Positive sigmoid scale for the reliability weight.
    pub k_r: f64,
    /// Floor of the reliability weight.
    pub alpha: f64,
    /// Clamp center closeness into [0, 1] before averaging with IoU.
    pub clamp_cc: bool,
    /// Count each candidate at most once in the reliability numerator.
    pub dedup_numerator: bool,
}

impl Default for PcrParams {
    fn default() -> Self {
        Self {
            c: 0.5,
            k_c: -60.0,
            k_r: 10.0,
            alpha: 0.2,
            clamp_cc: true,
            dedup_numerator: false,
        }
    }
}

impl PcrParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, message: String| Err(Error::InvalidParam { name, message });
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad("c", format!("{} not in (0, 1)", self.c));
        }
        if !(self.k_c < 0.0) {
            return bad("k_c", format!("{} must be negative", self.k_c));
        }
        if !(self.k_r > 0.0) {
            return bad("k_r", format!("{} must be positive", self.k_r));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} not in [0, 1)", self.alpha));
        }
        Ok(())
    }

    /// Consistency weight: near one for low confidence, near zero for high.
    pub fn sigma_c(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.k_c * (x - self.c)).exp())
    }

    /// Reliability weight in `[alpha, 1)`: near one for high confidence.
    pub fn sigma_r(&self, x: f64) -> f64 {
        self.alpha + (1.0 - self.alpha) / (1.0 + (-self.k_r * (x - self.c)).exp())
    }
}

/// Everything needed to turn a raw record into scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub pcr: PcrParams,
    pub post: PostProcess,
}

/// Diagnostic conditions attached to an image's scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No final predictions; every score is zero.
    EmptyImage,
    /// No associated candidates; reliability is zero.
    EmptyPool,
    /// Some finals had no associated candidates and scored zero consistency.
    OrphanFinals,
    /// Some finals had a zero-diagonal box and scored zero consistency.
    DegenerateFinals,
    /// Overlapping association lists pushed reliability above one.
    ReliabilityAboveOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    pub consistency: f64,
    pub consistency_unscaled: f64,
    /// Consistency with the IoU term only (no center closeness), scaled.
    pub consistency_iou: f64,
    pub reliability: f64,
    pub ps: f64,
    pub es: f64,
    pub ac: f64,
    pub atc: f64,
    pub n_finals: usize,
    pub n_candidates: usize,
    pub n_orphans: usize,
    pub flags: Vec<Flag>,
}

/// Per-prediction consistency parts against the merged box of its candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionConsistency {
    pub iou: f64,
    pub closeness: f64,
}

impl PredictionConsistency {
    pub fn score(&self) -> f64 {
        (self.iou + self.closeness) / 2.0
    }
}

/// Compares a final prediction with the merged box of its associated candidates.
pub fn consistency_per_prediction(
    final_pred: &FinalPrediction,
    candidates: &[crate::detection::CandidateBox],
    params: &PcrParams,
) -> Result<PredictionConsistency> {
    let merged = merge_boxes(
        final_pred
            .associated_indices()
            .iter()
            .map(|&j| &candidates[j].bbox),
    )?;
    let mut closeness = center_closeness(&final_pred.bbox, &merged)?;
    if params.clamp_cc {
        closeness = closeness.clamp(0.0, 1.0);
    }
    Ok(PredictionConsistency {
        iou: iou(&final_pred.bbox, &merged),
        closeness,
    })
}

/// Image-level consistency values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageConsistency {
    pub scaled: f64,
    pub unscaled: f64,
    pub iou_scaled: f64,
    pub orphans: usize,
    pub degenerate: usize,
}

pub fn image_consistency(record: &ImageRecord, params: &PcrParams) -> ImageConsistency {
    let finals = record.final_predictions();
    let mut out = ImageConsistency::default();
    if finals.is_empty() {
        return out;
    }
    for f in finals {
        let parts = match consistency_per_prediction(f, &record.candidates, params) {
            Ok(p) => p,
            Err(Error::EmptyMerge) => {
                out.orphans += 1;
                continue;
            }
            Err(_) => {
                out.degenerate += 1;
                continue;
            }
        };
        let weight = params.sigma_c(f.confidence);
        out.scaled += parts.score() * weight;
        out.unscaled += parts.score();
        out.iou_scaled += parts.iou * weight;
    }
    let n = finals.len() as f64;
    out.scaled /= n;
    out.unscaled /= n;
    out.iou_scaled /= n;
    out
}

/// Share of the (weighted) candidate pool attached to confident finals.
/// Returns `None` when the pool is empty.
pub fn image_reliability(record: &ImageRecord, params: &PcrParams) -> Option<f64> {
    let pool = record.pool();
    if pool.is_empty() {
        return None;
    }
    let weight = |j: usize| params.sigma_r(record.candidates[j].confidence);
    let confident = record
        .final_predictions()
        .iter()
        .filter(|f| f.confidence > params.c);
    let numerator: f64 = if params.dedup_numerator {
        let mut idx: Vec<usize> = confident
            .flat_map(|f| f.associated_indices().iter().copied())
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(weight).sum()
    } else {
        confident
            .flat_map(|f| f.associated_indices().iter().copied())
            .map(weight)
            .sum()
    };
    let denominator: f64 = pool.into_iter().map(weight).sum();
    Some(numerator / denominator)
}

/// Confidence-only baselines.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Baselines {
    pub ps: f64,
    pub es: f64,
    pub ac: f64,
    pub atc: f64,
}

fn binary_entropy(h: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.ln() };
    term(h) + term(1.0 - h)
}

/// PS, ES, ATC over final confidences; AC over candidates at or above `score_floor`.
/// ES is the negated mean entropy so that higher means more certain.
pub fn baseline_scores(record: &ImageRecord, params: &PcrParams, score_floor: f64) -> Baselines {
    let finals = record.final_predictions();
    if finals.is_empty() {
        return Baselines::default();
    }
    let n = finals.len() as f64;
    let ps = finals.iter().map(|f| f.confidence).sum::<f64>() / n;
    let es = -finals.iter().map(|f| binary_entropy(f.confidence)).sum::<f64>() / n;
    let atc = finals.iter().filter(|f| f.confidence > params.c).count() as f64 / n;
    let (sum, count) = record
        .candidates
        .iter()
        .filter(|c| c.confidence >= score_floor)
        .fold((0.0, 0usize), |(s, k), c| (s + c.confidence, k + 1));
    let ac = if count == 0 { 0.0 } else { sum / count as f64 };
    Baselines { ps, es, ac, atc }
}

/// Scores an already-resolved record.
pub fn score_image(record: &ImageRecord, params: &PcrParams, score_floor: f64) -> ImageScores {
    let mut flags = Vec::new();
    let n_finals = record.final_predictions().len();
    if n_finals == 0 {
        flags.push(Flag::EmptyImage);
    }
    let consistency = image_consistency(record, params);
    if consistency.orphans > 0 {
        flags.push(Flag::OrphanFinals);
    }
    if consistency.degenerate > 0 {
        flags.push(Flag::DegenerateFinals);
    }
    let reliability = match image_reliability(record, params) {
        Some(r) => {
            if r > 1.0 {
                flags.push(Flag::ReliabilityAboveOne);
            }
            r
        }
        None => {
            flags.push(Flag::EmptyPool);
            0.0
        }
    };
    let base = baseline_scores(record, params, score_floor);
    ImageScores {
        image_id: record.image_id.clone(),
        consistency: consistency.scaled,
        consistency_unscaled: consistency.unscaled,
        consistency_iou: consistency.iou_scaled,
        reliability,
        ps: base.ps,
        es: base.es,
        ac: base.ac,
        atc: base.atc,
        n_finals,
        n_candidates: record.pool().len(),
        n_orphans: consistency.orphans,
        flags,
    }
}

/// Resolves and scores every record in parallel; output order matches input.
pub fn score_records(records: &[ImageRecord], config: &ScoreConfig) -> Vec<ImageScores> {
    records
        .par_iter()
        .map(|r| score_image(&r.resolve(&config.post), &config.pcr, config.post.score_floor))
        .collect()
}

/// Dataset-level means of every per-image score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// 0 marks an untransformed test set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<u8>,
    pub n_images: usize,
    pub consistency: f64,
    pub consistency_unscaled: f64,
    pub consistency_iou: f64,
    pub reliability: f64,
    pub ps: f64,
    pub es: f64,
    pub ac: f64,
    pub atc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_map: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_map50: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_map75: Option<f64>,
}

/// Names accepted by [`DatasetSummary::feature`].
pub const FEATURE_NAMES: [&str; 8] = [
    "consistency",
    "consistency_unscaled",
    "consistency_iou",
    "reliability",
    "ps",
    "es",
    "ac",
    "atc",
];

impl DatasetSummary {
    pub fn feature(&self, name: &str) -> Option<f64> {
        Some(match name {
            "consistency" => self.consistency,
            "consistency_unscaled" => self.consistency_unscaled,
            "consistency_iou" => self.consistency_iou,
            "reliability" => self.reliability,
            "ps" => self.ps,
            "es" => self.es,
            "ac" => self.ac,
            "atc" => self.atc,
            _ => return None,
        })
    }

    /// True mAP at the given target (`map`, `map50`, `map75`).
    pub fn target(&self, target: crate::evaluation::MapTarget) -> Option<f64> {
        use crate::evaluation::MapTarget;
        match target {
            MapTarget::Map => self.true_map,
            MapTarget::Map50 => self.true_map50,
            MapTarget::Map75 => self.true_map75,
        }
    }
}

/// Averages per-image scores in input order.
pub fn summarize(scores: &[ImageScores], dataset_id: impl Into<String>) -> Result<DatasetSummary> {
    if scores.is_empty() {
        return Err(Error::NoImages);
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&ImageScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(DatasetSummary {
        dataset_id: dataset_id.into(),
        source: None,
        variant: None,
        severity: None,
        n_images: scores.len(),
        consistency: mean(|s| s.consistency),
        consistency_unscaled: mean(|s| s.consistency_unscaled),
        consistency_iou: mean(|s| s.consistency_iou),
        reliability: mean(|s| s.reliability),
        ps: mean(|s| s.ps),
        es: mean(|s| s.es),
        ac: mean(|s| s.ac),
        atc: mean(|s| s.atc),
        true_map: None,
        true_map50: None,
        true_map75: None,
    })
}
