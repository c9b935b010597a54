//! Runs NMS with suppression tracking, compares it with IoU association and
//! round-trips the result through a JSON-Lines dump.

use pcr::detection::{associate, nms, read_dump_all, write_dump};
use pcr::synth::{generate_dataset, SourceSpec, Variant};

fn main() -> pcr::Result<()> {
    let bank = SourceSpec::default_bank(0, 3);
    let deg = Variant::default_set()[2].apply(&bank[0].base, 3);
    let images = generate_dataset(&bank[0].scene, &deg, 3)?;

    let image = &images[0];
    let kept = nms(&image.candidates, 0.5, 0.05);
    let overlap = associate(&kept, &image.candidates, 0.5);
    println!("{} candidates -> {} finals", image.candidates.len(), kept.len());
    for (k, o) in kept.iter().zip(&overlap) {
        println!(
            "  class {} conf {:.2}: suppressed {:?}  overlapping {:?}",
            k.class_id,
            k.confidence,
            k.associated_indices(),
            o.associated_indices()
        );
    }

    let dir = std::env::temp_dir().join(format!("pcr-nms-dump-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| pcr::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("images.jsonl");
    write_dump(&images, &path)?;
    let back = read_dump_all(&path)?;
    println!("{} records written and read back, identical: {}", back.len(), back == images);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
