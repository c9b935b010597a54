//! Mean true mAP per severity, and regression error when training on a
//! single severity at a time.

use pcr::pipeline::summarize_meta;
use pcr::synth::{generate_meta, SourceSpec, Variant};
use pcr::{leave_one_out, LooOptions, Method, ScoreConfig};

fn main() -> pcr::Result<()> {
    let data = generate_meta(&SourceSpec::default_bank(0, 40), &Variant::default_set())?;
    let summaries = summarize_meta(&data, &ScoreConfig::default())?;
    let methods = Method::standard();
    print!("{:<10}{:>10}", "severity", "mean mAP");
    for m in &methods {
        print!("{:>9}", m.name);
    }
    println!();
    for sev in 1..=5u8 {
        let maps: Vec<f64> = summaries
            .iter()
            .filter(|s| s.severity == Some(sev))
            .filter_map(|s| s.true_map)
            .collect();
        print!("{sev:<10}{:>10.3}", maps.iter().sum::<f64>() / maps.len() as f64);
        for m in &methods {
            let opts = LooOptions {
                severity: Some(sev),
                ..LooOptions::default()
            };
            print!("{:>9.4}", leave_one_out(&summaries, m, &opts)?.rmse);
        }
        println!();
    }
    Ok(())
}
