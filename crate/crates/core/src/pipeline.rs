//! Dump-to-summary plumbing shared by the CLI, examples and tests.

use std::path::Path;

use rayon::prelude::*;

use crate::detection::{read_dump_all, ImageRecord};
use crate::error::Result;
use crate::evaluation::evaluate_map;
use crate::scoring::{score_image, summarize, DatasetSummary, ImageScores, ScoreConfig};
use crate::synth::{Manifest, ManifestEntry};

/// Scores every image and averages. When every record carries ground truth
/// the summary's true mAP fields are filled in as well.
pub fn summarize_records(
    records: &[ImageRecord],
    config: &ScoreConfig,
    dataset_id: &str,
) -> Result<(Vec<ImageScores>, DatasetSummary)> {
    let resolved: Vec<ImageRecord> = records.par_iter().map(|r| r.resolve(&config.post)).collect();
    let scores: Vec<ImageScores> = resolved
        .par_iter()
        .map(|r| score_image(r, &config.pcr, config.post.score_floor))
        .collect();
    let mut summary = summarize(&scores, dataset_id)?;
    if resolved.iter().all(|r| r.ground_truth.is_some()) {
        let report = evaluate_map(&resolved)?;
        summary.true_map = Some(report.map);
        summary.true_map50 = Some(report.map50);
        summary.true_map75 = Some(report.map75);
    }
    Ok((scores, summary))
}

fn tag(mut summary: DatasetSummary, entry: &ManifestEntry) -> DatasetSummary {
    summary.source = Some(entry.source.clone());
    summary.variant = Some(entry.variant.clone());
    summary.severity = Some(entry.severity);
    summary
}

/// Summaries of in-memory meta-dataset members, in input order.
pub fn summarize_meta(datasets: &[(ManifestEntry, Vec<ImageRecord>)], config: &ScoreConfig) -> Result<Vec<DatasetSummary>> {
    datasets
        .par_iter()
        .map(|(entry, records)| {
            let (_, summary) = summarize_records(records, config, &entry.dataset_id())?;
            Ok(tag(summary, entry))
        })
        .collect()
}

/// Reads every dump listed in a manifest and summarizes it.
pub fn summarize_manifest(manifest_path: &Path, config: &ScoreConfig) -> Result<Vec<DatasetSummary>> {
    let manifest: Manifest = crate::fsutil::read_json(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .datasets
        .par_iter()
        .map(|entry| {
            let records = read_dump_all(root.join(&entry.path))?;
            let (_, summary) = summarize_records(&records, config, &entry.dataset_id())?;
            Ok(tag(summary, entry))
        })
        .collect()
}
