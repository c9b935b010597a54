//! COCO-style mAP of a simulated detector, clean and heavily degraded.

use pcr::synth::{generate_dataset, SourceSpec, Variant};
use pcr::{evaluate_map, ImageRecord, PostProcess};

fn main() -> pcr::Result<()> {
    let bank = SourceSpec::default_bank(0, 50);
    let src = &bank[1];
    for (label, deg) in [
        ("clean", src.base.clone()),
        ("fog, severity 5", Variant::default_set()[6].apply(&src.base, 5)),
    ] {
        let records: Vec<ImageRecord> = generate_dataset(&src.scene, &deg, 7)?
            .iter()
            .map(|r| r.resolve(&PostProcess::default()))
            .collect();
        println!("== {} / {label}", src.name);
        print!("{}", evaluate_map(&records)?);
    }
    Ok(())
}
