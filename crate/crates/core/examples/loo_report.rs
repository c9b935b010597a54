//! Leave-one-source-out comparison of every named method on one meta-dataset.

use pcr::pipeline::summarize_meta;
use pcr::regression::ReportTable;
use pcr::synth::{generate_meta, SourceSpec, Variant};
use pcr::{leave_one_out, LooOptions, Method, ScoreConfig};

fn main() -> pcr::Result<()> {
    let data = generate_meta(&SourceSpec::default_bank(0, 40), &Variant::default_set())?;
    let summaries = summarize_meta(&data, &ScoreConfig::default())?;
    let methods = Method::all();
    let mut rmse = Vec::new();
    for m in &methods {
        let rep = leave_one_out(&summaries, m, &LooOptions::default())?;
        println!(
            "{:<22} rmse {:.4}  pearson {:>7}  spearman {:>7}",
            m.name,
            rep.rmse,
            rep.pearson.map_or("-".into(), |v| format!("{v:.3}")),
            rep.spearman.map_or("-".into(), |v| format!("{v:.3}"))
        );
        rmse.push(vec![rep.rmse]);
    }
    let names: Vec<String> = methods.iter().map(|m| m.name.clone()).collect();
    print!("\n{}", ReportTable::new(vec!["seed0".into()], &names, rmse));
    Ok(())
}
