//! Label-free mAP estimation for object detectors.
//!
//! Detectors emit many candidate boxes before non-maximum suppression. This
//! crate scores how those candidates relate to the final predictions:
//!
//! * **consistency**: agreement (IoU and center closeness) between each final
//!   box and the box enclosing its candidates, weighted toward low-confidence
//!   predictions;
//! * **reliability**: the share of candidate confidence mass attached to
//!   confident final predictions.
//!
//! Dataset-level averages of these scores are regressed against true mAP on
//! a meta-dataset of degraded datasets, and the fitted model then estimates
//! mAP on unlabeled data. The [`synth`] module generates such meta-datasets
//! from a seeded detector simulator; [`evaluation`] supplies the ground-truth
//! mAP they are fit against.

pub mod cli;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod geometry;
pub mod pipeline;
pub mod regression;
pub mod scoring;
pub mod synth;

pub use detection::{CandidateBox, FinalPrediction, GroundTruthBox, ImageRecord, PostProcess};
pub use error::{Error, Result};
pub use evaluation::{evaluate_map, ApReport, MapTarget};
pub use geometry::{center_closeness, iou, merge_boxes, BBox};
pub use regression::{leave_one_out, EvalReport, LooOptions, Method, RegressionModel};
pub use scoring::{DatasetSummary, ImageScores, PcrParams, ScoreConfig};
