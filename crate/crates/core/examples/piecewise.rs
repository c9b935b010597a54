//! Plain versus piecewise regression (split at 5% true mAP) under leave-one-out.

use pcr::pipeline::summarize_meta;
use pcr::regression::PIECEWISE_THRESHOLD;
use pcr::synth::{generate_meta, SourceSpec, Variant};
use pcr::{leave_one_out, LooOptions, Method, ScoreConfig};

fn main() -> pcr::Result<()> {
    let data = generate_meta(&SourceSpec::default_bank(2, 40), &Variant::default_set())?;
    let summaries = summarize_meta(&data, &ScoreConfig::default())?;
    let low = summaries.iter().filter(|s| s.true_map.is_some_and(|m| m < PIECEWISE_THRESHOLD)).count();
    println!("{low} of {} summaries fall below {PIECEWISE_THRESHOLD} mAP", summaries.len());
    for piecewise in [None, Some(PIECEWISE_THRESHOLD)] {
        let opts = LooOptions {
            piecewise,
            ..LooOptions::default()
        };
        let rep = leave_one_out(&summaries, &Method::pcr(), &opts)?;
        println!("{:<10} rmse {:.4}", if piecewise.is_some() { "piecewise" } else { "plain" }, rep.rmse);
        for h in &rep.held_out {
            println!("    {:<22} estimate {:.3}  true {:.3}", h.dataset_id, h.estimate, h.true_map);
        }
    }
    Ok(())
}
