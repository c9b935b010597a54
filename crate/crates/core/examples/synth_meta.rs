//! Writes a small synthetic meta-dataset to disk and summarizes it.

use pcr::pipeline::summarize_manifest;
use pcr::synth::{build_meta, SourceSpec, Variant};
use pcr::ScoreConfig;

fn main() -> pcr::Result<()> {
    let dir = std::env::temp_dir().join(format!("pcr-synth-meta-{}", std::process::id()));
    let manifest = build_meta(&SourceSpec::default_bank(0, 20), &Variant::default_set(), &dir)?;
    println!("{} datasets from sources {:?} in {}", manifest.datasets.len(), manifest.sources, dir.display());

    let summaries = summarize_manifest(&dir.join("manifest.json"), &ScoreConfig::default())?;
    println!("{:<28}{:>8}{:>13}{:>13}", "dataset", "mAP", "consistency", "reliability");
    for s in summaries.iter().filter(|s| s.variant.as_deref() == Some("jitter") || s.severity == Some(0)) {
        println!(
            "{:<28}{:>8.3}{:>13.4}{:>13.4}",
            s.dataset_id,
            s.true_map.unwrap_or(f64::NAN),
            s.consistency,
            s.reliability
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
