//! Ground-truth mAP: greedy matching, 101-point interpolated AP and
//! COCO-style mAP over IoU thresholds 0.50:0.05:0.95.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detection::{ClassId, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
const RECALL_POINTS: usize = 101;

/// Which true-mAP figure a regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapTarget {
    #[default]
    Map,
    Map50,
    Map75,
}

impl std::str::FromStr for MapTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(MapTarget::Map),
            "map50" => Ok(MapTarget::Map50),
            "map75" => Ok(MapTarget::Map75),
            other => Err(Error::InvalidParam {
                name: "target",
                message: format!("`{other}` is not one of map, map50, map75"),
            }),
        }
    }
}

/// Matching of one image/class slice at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Per prediction (in the order given): matched ground-truth index.
    pub matched_gt: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

/// Greedy matching. `predictions` must already be sorted by confidence
/// descending; each claims the unmatched ground truth with the highest IoU
/// at or above `iou_threshold`, lower index first on ties.
pub fn match_predictions(predictions: &[BBox], ground_truth: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut gt_matched = vec![false; ground_truth.len()];
    let matched_gt = predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in ground_truth.iter().enumerate() {
                if gt_matched[g] {
                    continue;
                }
                let v = iou(p, gt);
                if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let (g, _) = best?;
            gt_matched[g] = true;
            Some(g)
        })
        .collect();
    MatchResult {
        matched_gt,
        gt_matched,
    }
}

/// 101-point interpolated AP from `(confidence, is_true_positive)` pairs.
/// Pairs with equal confidence keep their input order. Returns `None` when
/// `n_ground_truth` is zero.
pub fn average_precision(labels: &[(f64, bool)], n_ground_truth: usize) -> Option<f64> {
    if n_ground_truth == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].0.total_cmp(&labels[a].0).then(a.cmp(&b)));

    let mut true_pos = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        tp += labels[i].1 as usize;
        true_pos.push(tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (1..precision.len()).rev() {
        precision[k - 1] = precision[k - 1].max(precision[k]);
    }

    // recall >= r/100  <=>  tp * 100 >= r * n_gt, compared exactly
    let steps = (RECALL_POINTS - 1) as usize;
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..RECALL_POINTS {
        while k < true_pos.len() && true_pos[k] * steps < r * n_ground_truth {
            k += 1;
        }
        if k == true_pos.len() {
            break;
        }
        sum += precision[k];
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: ClassId,
    pub n_ground_truth: usize,
    /// AP at each threshold of [`IOU_THRESHOLDS`].
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub iou_thresholds: Vec<f64>,
    /// Classes with at least one ground-truth box.
    pub per_class: Vec<ClassAp>,
    /// Mean AP over classes, per threshold.
    pub per_threshold: Vec<f64>,
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
}

impl ApReport {
    pub fn get(&self, target: MapTarget) -> f64 {
        match target {
            MapTarget::Map => self.map,
            MapTarget::Map50 => self.map50,
            MapTarget::Map75 => self.map75,
        }
    }
}

impl fmt::Display for ApReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<8}{:>8}", "class", "n_gt")?;
        for t in &self.iou_thresholds {
            write!(f, "{:>7.2}", t)?;
        }
        writeln!(f)?;
        for c in &self.per_class {
            write!(f, "{:<8}{:>8}", c.class_id, c.n_ground_truth)?;
            for ap in &c.ap {
                write!(f, "{:>7.4}", ap)?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<16}", "mean")?;
        for ap in &self.per_threshold {
            write!(f, "{:>7.4}", ap)?;
        }
        writeln!(f)?;
        writeln!(f, "mAP {:.4}  mAP50 {:.4}  mAP75 {:.4}", self.map, self.map50, self.map75)
    }
}

/// Evaluates the final predictions of resolved records against their ground truth.
pub fn evaluate_map(records: &[ImageRecord]) -> Result<ApReport> {
    // class -> per-threshold (confidence, tp) labels, and ground-truth count
    let mut labels: BTreeMap<ClassId, Vec<Vec<(f64, bool)>>> = BTreeMap::new();
    let mut n_gt: BTreeMap<ClassId, usize> = BTreeMap::new();

    for record in records {
        let gt = record
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(record.image_id.clone()))?;
        let mut classes: Vec<ClassId> = gt
            .iter()
            .map(|g| g.class_id)
            .chain(record.final_predictions().iter().map(|f| f.class_id))
            .collect();
        classes.sort_unstable();
        classes.dedup();

        for class in classes {
            let gt_boxes: Vec<BBox> = gt.iter().filter(|g| g.class_id == class).map(|g| g.bbox).collect();
            *n_gt.entry(class).or_default() += gt_boxes.len();

            let finals = record.final_predictions();
            let mut preds: Vec<usize> = (0..finals.len()).filter(|&i| finals[i].class_id == class).collect();
            preds.sort_by(crate::detection::by_confidence_desc(|i| finals[i].confidence));
            let pred_boxes: Vec<BBox> = preds.iter().map(|&i| finals[i].bbox).collect();

            let per_threshold = labels
                .entry(class)
                .or_insert_with(|| vec![Vec::new(); IOU_THRESHOLDS.len()]);
            for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
                let m = match_predictions(&pred_boxes, &gt_boxes, thr);
                per_threshold[t].extend(
                    preds
                        .iter()
                        .zip(&m.matched_gt)
                        .map(|(&i, g)| (finals[i].confidence, g.is_some())),
                );
            }
        }
    }

    let mut per_class = Vec::new();
    for (class, per_threshold) in labels {
        let count = n_gt.get(&class).copied().unwrap_or(0);
        if count == 0 {
            continue;
        }
        let ap = per_threshold
            .iter()
            .map(|l| average_precision(l, count).expect("positive ground truth"))
            .collect();
        per_class.push(ClassAp {
            class_id: class,
            n_ground_truth: count,
            ap,
        });
    }
    if per_class.is_empty() {
        return Err(Error::NoGroundTruthObjects);
    }

    let per_threshold: Vec<f64> = (0..IOU_THRESHOLDS.len())
        .map(|t| per_class.iter().map(|c| c.ap[t]).sum::<f64>() / per_class.len() as f64)
        .collect();
    let map = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(ApReport {
        iou_thresholds: IOU_THRESHOLDS.to_vec(),
        map50: per_threshold[0],
        map75: per_threshold[5],
        map,
        per_threshold,
        per_class,
    })
}
