//! Consistency, reliability and the confidence baselines for one hand-built image.

use pcr::scoring::{baseline_scores, consistency_per_prediction, image_consistency, image_reliability};
use pcr::{merge_boxes, BBox, CandidateBox, FinalPrediction, ImageRecord, PcrParams};

fn main() -> pcr::Result<()> {
    let cand = |x0, y0, x1, y1, confidence| -> pcr::Result<CandidateBox> {
        Ok(CandidateBox {
            bbox: BBox::new(x0, y0, x1, y1)?,
            confidence,
            class_id: 0,
        })
    };
    // a tight, confident cluster and a loose, doubtful one
    let candidates = vec![
        cand(10.0, 10.0, 50.0, 40.0, 0.92)?,
        cand(11.0, 9.0, 51.0, 41.0, 0.85)?,
        cand(9.0, 11.0, 49.0, 39.0, 0.80)?,
        cand(100.0, 100.0, 130.0, 120.0, 0.35)?,
        cand(92.0, 104.0, 126.0, 131.0, 0.30)?,
        cand(105.0, 95.0, 140.0, 118.0, 0.22)?,
    ];
    let finals = vec![
        FinalPrediction {
            bbox: candidates[0].bbox,
            confidence: 0.92,
            class_id: 0,
            associated: Some(vec![0, 1, 2]),
        },
        FinalPrediction {
            bbox: candidates[3].bbox,
            confidence: 0.35,
            class_id: 0,
            associated: Some(vec![3, 4, 5]),
        },
    ];
    let record = ImageRecord {
        image_id: "demo".into(),
        candidates,
        finals: Some(finals),
        ground_truth: None,
    };
    let params = PcrParams::default();

    for (i, f) in record.final_predictions().iter().enumerate() {
        let merged = merge_boxes(f.associated_indices().iter().map(|&j| &record.candidates[j].bbox))?;
        let parts = consistency_per_prediction(f, &record.candidates, &params)?;
        println!(
            "final {i}: conf {:.2}  merged {:?}  iou {:.3}  closeness {:.3}  score {:.3}  weight {:.3}",
            f.confidence,
            merged.to_array(),
            parts.iou,
            parts.closeness,
            parts.score(),
            params.sigma_c(f.confidence)
        );
    }
    let c = image_consistency(&record, &params);
    println!("consistency {:.4} (unscaled {:.4})", c.scaled, c.unscaled);
    println!("reliability {:.4}", image_reliability(&record, &params).unwrap_or(0.0));
    let b = baseline_scores(&record, &params, 0.05);
    println!("ps {:.4}  es {:.4}  ac {:.4}  atc {:.4}", b.ps, b.es, b.ac, b.atc);
    Ok(())
}
