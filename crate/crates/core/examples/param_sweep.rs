//! Sensitivity of the leave-one-out error to the score hyperparameters.

use pcr::pipeline::summarize_meta;
use pcr::synth::{generate_meta, SourceSpec, Variant};
use pcr::{leave_one_out, LooOptions, Method, PcrParams, ScoreConfig};

fn main() -> pcr::Result<()> {
    let data = generate_meta(&SourceSpec::default_bank(0, 30), &Variant::default_set())?;
    let base = PcrParams::default();
    let mut grid = vec![("defaults".to_string(), base)];
    for c in [0.3, 0.4, 0.6] {
        grid.push((format!("c={c}"), PcrParams { c, ..base }));
    }
    for k_c in [-10.0, -30.0, -120.0] {
        grid.push((format!("k_c={k_c}"), PcrParams { k_c, ..base }));
    }
    for k_r in [2.0, 5.0, 20.0] {
        grid.push((format!("k_r={k_r}"), PcrParams { k_r, ..base }));
    }
    for alpha in [0.0, 0.1, 0.5] {
        grid.push((format!("alpha={alpha}"), PcrParams { alpha, ..base }));
    }
    grid.push(("unclamped".into(), PcrParams { clamp_cc: false, ..base }));
    for (label, pcr) in grid {
        pcr.validate()?;
        let config = ScoreConfig { pcr, ..ScoreConfig::default() };
        let summaries = summarize_meta(&data, &config)?;
        let rep = leave_one_out(&summaries, &Method::pcr(), &LooOptions::default())?;
        println!("{label:<12} rmse {:.4}", rep.rmse);
    }
    Ok(())
}
