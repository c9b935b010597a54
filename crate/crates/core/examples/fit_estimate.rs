//! Fits the two-score regression on two sources and estimates the third
//! source's clean mAP without looking at its labels.

use pcr::pipeline::summarize_meta;
use pcr::regression::fit_summaries;
use pcr::synth::{generate_meta, SourceSpec, Variant};
use pcr::{DatasetSummary, MapTarget, Method, ScoreConfig};

fn main() -> pcr::Result<()> {
    let data = generate_meta(&SourceSpec::default_bank(1, 40), &Variant::default_set())?;
    let summaries = summarize_meta(&data, &ScoreConfig::default())?;
    let held_out = "parking";
    let train: Vec<&DatasetSummary> = summaries.iter().filter(|s| s.source.as_deref() != Some(held_out)).collect();
    let method = Method::pcr();
    let model = fit_summaries(&train, &method.features, MapTarget::Map)?;
    println!("trained on {} summaries, weights {:?}", train.len(), model.weights);

    for s in summaries.iter().filter(|s| s.source.as_deref() == Some(held_out)).step_by(10) {
        println!(
            "{:<24} estimate {:.3}  true {:.3}",
            s.dataset_id,
            pcr::regression::clamp_estimate(model.predict(s)?),
            s.true_map.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
