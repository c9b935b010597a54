//! Worked examples for every module, as named checks. Expected values marked
//! `oracle` are computed by `common::oracle` first and then compared.

use std::sync::OnceLock;

use pcr::detection::{associate, nms, parse_record, record_to_line, DumpReader};
use pcr::error::Location;
use pcr::evaluation::{average_precision, match_predictions};
use pcr::pipeline::{summarize_meta, summarize_records};
use pcr::regression::{fit, fit_piecewise, statistics, PIECEWISE_THRESHOLD};
use pcr::scoring::{
    baseline_scores, consistency_per_prediction, image_consistency, image_reliability, score_image, summarize,
};
use pcr::synth::{build_meta, generate_dataset, generate_meta, meta_plan, DegradationParams, SourceSpec, Variant};
use pcr::{
    center_closeness, evaluate_map, iou, leave_one_out, merge_boxes, BBox, CandidateBox, DatasetSummary, Error,
    FinalPrediction, GroundTruthBox, ImageRecord, LooOptions, Method, PcrParams, PostProcess, RegressionModel,
    ScoreConfig,
};
use rand::Rng;

use super::gen;
use super::oracle::{self, Det, Gt, OracleFinal, DEFAULTS};

pub type Outcome = Result<(), String>;
pub type Check = (&'static str, fn() -> Outcome);

const TOL: f64 = 1e-9;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Outcome {
    let err = (got - want).abs() / want.abs().max(1.0);
    ensure!(err <= tol, "{what}: got {got}, want {want} (rel err {err:e})");
    Ok(())
}

fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

fn cand(bbox: BBox, confidence: f64, class_id: u32) -> CandidateBox {
    CandidateBox {
        bbox,
        confidence,
        class_id,
    }
}

fn fin(bbox: BBox, confidence: f64, associated: Vec<usize>) -> FinalPrediction {
    FinalPrediction {
        bbox,
        confidence,
        class_id: 0,
        associated: Some(associated),
    }
}

fn record(candidates: Vec<CandidateBox>, finals: Vec<FinalPrediction>) -> ImageRecord {
    ImageRecord {
        image_id: "x".into(),
        candidates,
        finals: Some(finals),
        ground_truth: None,
    }
}

fn err<T: std::fmt::Debug>(r: pcr::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn summary(id: &str, source: &str, severity: u8, features: [f64; 8], map: f64) -> DatasetSummary {
    DatasetSummary {
        dataset_id: id.into(),
        source: Some(source.into()),
        variant: Some(if severity == 0 { "clean" } else { "v" }.into()),
        severity: Some(severity),
        n_images: 10,
        consistency: features[0],
        consistency_unscaled: features[1],
        consistency_iou: features[2],
        reliability: features[3],
        ps: features[4],
        es: features[5],
        ac: features[6],
        atc: features[7],
        true_map: Some(map),
        true_map50: Some(map),
        true_map75: Some(map),
    }
}

/// Seed-0 default meta-dataset, 100 images per dataset, summarized once.
pub fn default_meta() -> &'static [DatasetSummary] {
    static META: OnceLock<Vec<DatasetSummary>> = OnceLock::new();
    META.get_or_init(|| {
        let data = generate_meta(&SourceSpec::default_bank(0, 100), &Variant::default_set()).unwrap();
        summarize_meta(&data, &ScoreConfig::default()).unwrap()
    })
}

// ---- geometry

fn iou_identity() -> Outcome {
    close("iou", iou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0, 0.0)
}

fn iou_disjoint() -> Outcome {
    close("iou", iou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)), 0.0, 0.0)
}

fn iou_partial_overlap() -> Outcome {
    let want = oracle::raster_iou([0., 0., 2., 2.], [1., 1., 3., 3.], 200.0);
    close("raster oracle", want, 1.0 / 7.0, TOL)?;
    close("iou", iou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)), want, TOL)
}

fn merge_singleton() -> Outcome {
    let m = err(merge_boxes(&[b(0., 0., 2., 2.)]))?;
    ensure!(m == b(0., 0., 2., 2.), "got {m:?}");
    Ok(())
}

fn merge_pair() -> Outcome {
    let (x, y, w, h) = oracle::merge_center_form(&[[0., 0., 2., 2.], [1., 1., 4., 3.]]);
    ensure!((x, y, w, h) == (2.0, 1.5, 4.0, 3.0), "oracle gave {:?}", (x, y, w, h));
    let m = err(merge_boxes(&[b(0., 0., 2., 2.), b(1., 1., 4., 3.)]))?;
    ensure!(m == b(0., 0., 4., 3.), "got {m:?}");
    ensure!((m.center_x(), m.center_y(), m.width(), m.height()) == (x, y, w, h), "center form differs");
    Ok(())
}

fn merge_contains_members() -> Outcome {
    let mut r = gen::rng(11);
    for _ in 0..200 {
        let n = r.gen_range(1..8);
        let members: Vec<BBox> = (0..n).map(|_| gen::random_box(&mut r, 50.0, 50.0)).collect();
        let m = err(merge_boxes(&members))?;
        ensure!(members.iter().all(|x| m.contains(x)), "merged {m:?} misses a member");
    }
    Ok(())
}

fn closeness_coincident() -> Outcome {
    let merged = BBox::from_center(2.0, 1.5, 7.0, 1.0).unwrap();
    close("cc", err(center_closeness(&b(0., 0., 4., 3.), &merged))?, 1.0, 0.0)
}

fn closeness_offset() -> Outcome {
    let merged = BBox::from_center(4.0, 1.5, 2.0, 2.0).unwrap();
    let want = oracle::cc([0., 0., 4., 3.], (4.0, 1.5, 2.0, 2.0));
    close("oracle", want, 0.2, TOL)?;
    close("cc", err(center_closeness(&b(0., 0., 4., 3.), &merged))?, want, TOL)
}

fn closeness_scale_invariant() -> Outcome {
    let f = b(1., 2., 7., 5.);
    let m = b(0., 1., 9., 8.);
    let base = err(center_closeness(&f, &m))?;
    for s in [0.01, 0.5, 3.0, 1000.0] {
        close("scaled cc", err(center_closeness(&f.scaled(s), &m.scaled(s)))?, base, TOL)?;
    }
    Ok(())
}

// ---- detection

fn nms_single_candidate() -> Outcome {
    let out = nms(&[cand(b(0., 0., 1., 1.), 0.7, 0)], 0.5, 0.05);
    ensure!(out.len() == 1 && out[0].associated == Some(vec![0]), "got {out:?}");
    Ok(())
}

fn nms_full_overlap() -> Outcome {
    let c = [cand(b(0., 0., 2., 2.), 0.4, 0), cand(b(0., 0., 2., 2.), 0.9, 0)];
    let out = nms(&c, 0.5, 0.05);
    ensure!(out.len() == 1, "got {} finals", out.len());
    ensure!(out[0].confidence == 0.9, "kept {}", out[0].confidence);
    let mut a = out[0].associated_indices().to_vec();
    a.sort_unstable();
    ensure!(a == vec![0, 1], "associated {a:?}");
    Ok(())
}

fn nms_disjoint() -> Outcome {
    let c = [cand(b(0., 0., 1., 1.), 0.6, 0), cand(b(5., 5., 6., 6.), 0.8, 0)];
    let out = nms(&c, 0.5, 0.05);
    ensure!(out.len() == 2, "got {} finals", out.len());
    ensure!(out[0].associated == Some(vec![1]) && out[1].associated == Some(vec![0]), "got {out:?}");
    Ok(())
}

fn bare(bbox: BBox, class_id: u32) -> FinalPrediction {
    FinalPrediction {
        bbox,
        confidence: 0.9,
        class_id,
        associated: None,
    }
}

fn associate_identical() -> Outcome {
    let out = associate(&[bare(b(0., 0., 2., 2.), 1)], &[cand(b(0., 0., 2., 2.), 0.3, 1)], 0.5);
    ensure!(out[0].associated == Some(vec![0]), "got {:?}", out[0].associated);
    Ok(())
}

fn associate_class_gate() -> Outcome {
    let out = associate(&[bare(b(0., 0., 2., 2.), 1)], &[cand(b(0., 0., 2., 2.), 0.3, 2)], 0.5);
    ensure!(out[0].associated == Some(vec![]), "got {:?}", out[0].associated);
    Ok(())
}

fn associate_overlapping_lists() -> Outcome {
    let finals = [bare(b(0., 0., 10., 10.), 0), bare(b(1., 0., 11., 10.), 0)];
    let out = associate(&finals, &[cand(b(0.5, 0., 10.5, 10.), 0.5, 0)], 0.5);
    ensure!(
        out.iter().all(|f| f.associated == Some(vec![0])),
        "candidate should be in both lists: {out:?}"
    );
    Ok(())
}

fn dump_empty_file() -> Outcome {
    let n = DumpReader::new(std::io::Cursor::new("")).count();
    ensure!(n == 0, "{n} records from an empty file");
    Ok(())
}

fn dump_round_trip() -> Outcome {
    let mut r = gen::rng(5);
    for i in 0..200 {
        let mut rec = gen::random_image(&mut r, i, 6);
        if i % 2 == 0 {
            rec.ground_truth = Some(vec![GroundTruthBox {
                bbox: gen::random_box(&mut r, 30.0, 30.0),
                class_id: 1,
            }]);
        }
        if i % 3 == 0 {
            rec.finals = None;
        }
        let back = err(parse_record(&record_to_line(&rec), &Location { path: None, line: 1 }))?;
        ensure!(back == rec, "record {i} changed in round trip");
    }
    Ok(())
}

fn dump_missing_candidates() -> Outcome {
    let loc = Location { path: None, line: 3 };
    match parse_record(r#"{"image_id": "a"}"#, &loc) {
        Err(e @ Error::Schema { .. }) => {
            let msg = e.to_string();
            ensure!(msg.contains("candidates") && msg.contains("line 3"), "message {msg:?}");
            Ok(())
        }
        other => Err(format!("expected a schema error, got {other:?}")),
    }
}

// ---- scoring

fn sigma_c_midpoint() -> Outcome {
    close("sigma_c", PcrParams::default().sigma_c(0.5), 0.5, 0.0)
}

fn sigma_c_at_zero() -> Outcome {
    let want = oracle::sigma_c(0.0, DEFAULTS.k_c, DEFAULTS.c);
    close("oracle", want, 1.0, 1e-12)?;
    close("sigma_c", PcrParams::default().sigma_c(0.0), want, TOL)
}

fn sigma_c_monotone() -> Outcome {
    let p = PcrParams::default();
    let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    ensure!(xs.windows(2).all(|w| p.sigma_c(w[1]) <= p.sigma_c(w[0])), "sigma_c increases somewhere");
    Ok(())
}

fn sigma_r_midpoint() -> Outcome {
    close("sigma_r", PcrParams::default().sigma_r(0.5), 0.6, TOL)
}

fn sigma_r_at_point_nine() -> Outcome {
    let want = oracle::sigma_r(0.9, DEFAULTS.k_r, DEFAULTS.c, DEFAULTS.alpha);
    close("oracle", want, 0.98561, 1e-5)?;
    close("sigma_r", PcrParams::default().sigma_r(0.9), want, TOL)
}

fn sigma_r_range() -> Outcome {
    let p = PcrParams::default();
    let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    ensure!(xs.iter().all(|&x| p.sigma_r(x) >= p.alpha && p.sigma_r(x) < 1.0), "sigma_r out of [alpha, 1)");
    ensure!(xs.windows(2).all(|w| p.sigma_r(w[1]) >= p.sigma_r(w[0])), "sigma_r decreases somewhere");
    Ok(())
}

fn self_merge_scores_one() -> Outcome {
    let f = fin(b(3., 4., 9., 8.), 0.8, vec![0]);
    let parts = err(consistency_per_prediction(&f, &[cand(b(3., 4., 9., 8.), 0.8, 0)], &PcrParams::default()))?;
    close("score", parts.score(), 1.0, 0.0)
}

fn coincident_centers_half_iou() -> Outcome {
    let final_rect = [0., 0., 4., 3.];
    let s = std::f64::consts::SQRT_2;
    let merged_rect = [2.0 - 2.0 * s, 1.5 - 1.5 * s, 2.0 + 2.0 * s, 1.5 + 1.5 * s];
    let of = OracleFinal {
        rect: final_rect,
        h: 0.5,
        assoc: vec![0],
    };
    let want = oracle::s_c_i(&of, &[(merged_rect, 0.5)]);
    close("oracle", want, 0.75, TOL)?;
    let f = fin(b(0., 0., 4., 3.), 0.5, vec![0]);
    let merged = BBox::from_array(merged_rect).unwrap();
    let got = err(consistency_per_prediction(&f, &[cand(merged, 0.5, 0)], &PcrParams::default()))?;
    close("iou", got.iou, 0.5, TOL)?;
    close("score", got.score(), want, TOL)
}

fn prediction_score_in_unit_interval() -> Outcome {
    let mut r = gen::rng(21);
    let p = PcrParams::default();
    for i in 0..500 {
        let rec = gen::random_image(&mut r, i, 8);
        for f in rec.final_predictions() {
            let s = err(consistency_per_prediction(f, &rec.candidates, &p))?.score();
            ensure!((0.0..=1.0).contains(&s), "score {s}");
        }
    }
    Ok(())
}

fn image_consistency_one_final() -> Outcome {
    let rec = record(vec![cand(b(0., 0., 2., 2.), 0.5, 0)], vec![fin(b(0., 0., 2., 2.), 0.5, vec![0])]);
    let c = image_consistency(&rec, &PcrParams::default());
    close("scaled", c.scaled, 0.5, TOL)?;
    close("unscaled", c.unscaled, 1.0, TOL)
}

fn image_consistency_no_finals() -> Outcome {
    let rec = record(vec![], vec![]);
    let s = score_image(&rec, &PcrParams::default(), 0.05);
    ensure!(s.consistency == 0.0 && s.consistency_unscaled == 0.0, "got {s:?}");
    ensure!(s.flags.contains(&pcr::scoring::Flag::EmptyImage), "not flagged: {:?}", s.flags);
    Ok(())
}

fn image_consistency_two_finals() -> Outcome {
    let rects = [[0., 0., 2., 2.], [5., 5., 7., 7.]];
    let pre = [(rects[0], 0.99), (rects[1], 0.01)];
    let ofs = [
        OracleFinal {
            rect: rects[0],
            h: 0.99,
            assoc: vec![0],
        },
        OracleFinal {
            rect: rects[1],
            h: 0.01,
            assoc: vec![1],
        },
    ];
    let want = oracle::s_c(&ofs, &pre, &DEFAULTS);
    close("oracle", want, 0.5, 1e-9)?;
    let rec = record(
        vec![cand(b(0., 0., 2., 2.), 0.99, 0), cand(b(5., 5., 7., 7.), 0.01, 0)],
        vec![fin(b(0., 0., 2., 2.), 0.99, vec![0]), fin(b(5., 5., 7., 7.), 0.01, vec![1])],
    );
    let c = image_consistency(&rec, &PcrParams::default());
    close("scaled", c.scaled, want, TOL)?;
    close("unscaled", c.unscaled, oracle::s_c_all(&ofs, &pre), TOL)?;
    close("unscaled", c.unscaled, 1.0, TOL)
}

fn reliability_two_disjoint_finals() -> Outcome {
    let rects = [[0., 0., 1., 1.], [5., 5., 6., 6.]];
    let pre = [(rects[0], 0.9), (rects[1], 0.1)];
    let ofs = [
        OracleFinal {
            rect: rects[0],
            h: 0.9,
            assoc: vec![0],
        },
        OracleFinal {
            rect: rects[1],
            h: 0.1,
            assoc: vec![1],
        },
    ];
    let want = oracle::s_r(&ofs, &pre, &DEFAULTS);
    close("oracle", want, 0.82134, 1e-5)?;
    let rec = record(
        vec![cand(b(0., 0., 1., 1.), 0.9, 0), cand(b(5., 5., 6., 6.), 0.1, 0)],
        vec![fin(b(0., 0., 1., 1.), 0.9, vec![0]), fin(b(5., 5., 6., 6.), 0.1, vec![1])],
    );
    close("reliability", image_reliability(&rec, &PcrParams::default()).unwrap(), want, TOL)
}

fn reliability_all_below_threshold() -> Outcome {
    let rec = record(
        vec![cand(b(0., 0., 1., 1.), 0.4, 0), cand(b(0., 0., 1., 1.), 0.3, 0)],
        vec![fin(b(0., 0., 1., 1.), 0.4, vec![0, 1])],
    );
    close("reliability", image_reliability(&rec, &PcrParams::default()).unwrap(), 0.0, 0.0)
}

fn reliability_full_cover() -> Outcome {
    let rec = record(
        vec![cand(b(0., 0., 1., 1.), 0.8, 0), cand(b(0., 0., 1., 1.), 0.3, 0), cand(b(0., 0., 1., 1.), 0.1, 0)],
        vec![fin(b(0., 0., 1., 1.), 0.8, vec![0, 1, 2])],
    );
    close("reliability", image_reliability(&rec, &PcrParams::default()).unwrap(), 1.0, TOL)
}

fn baselines_certain_final() -> Outcome {
    let rec = record(vec![cand(b(0., 0., 1., 1.), 1.0, 0)], vec![fin(b(0., 0., 1., 1.), 1.0, vec![0])]);
    let s = baseline_scores(&rec, &PcrParams::default(), 0.05);
    ensure!(s.ps == 1.0 && s.es == 0.0 && s.atc == 1.0, "got {s:?}");
    Ok(())
}

fn baselines_entropy_half() -> Outcome {
    let rec = record(
        vec![cand(b(0., 0., 1., 1.), 0.5, 0), cand(b(3., 3., 4., 4.), 0.5, 0)],
        vec![fin(b(0., 0., 1., 1.), 0.5, vec![0]), fin(b(3., 3., 4., 4.), 0.5, vec![1])],
    );
    let s = baseline_scores(&rec, &PcrParams::default(), 0.05);
    close("ps", s.ps, 0.5, TOL)?;
    let entropy = -(0.5f64.ln());
    close("closed form", entropy, 0.6931, 1e-4)?;
    close("es", s.es, -entropy, TOL)
}

fn baselines_atc_half() -> Outcome {
    let rec = record(
        vec![cand(b(0., 0., 1., 1.), 0.6, 0), cand(b(3., 3., 4., 4.), 0.4, 0)],
        vec![fin(b(0., 0., 1., 1.), 0.6, vec![0]), fin(b(3., 3., 4., 4.), 0.4, vec![1])],
    );
    close("atc", baseline_scores(&rec, &PcrParams::default(), 0.05).atc, 0.5, 0.0)
}

fn scored(i: usize) -> pcr::ImageScores {
    let mut r = gen::rng(100 + i as u64);
    score_image(&gen::random_image(&mut r, i, 8), &PcrParams::default(), 0.05)
}

fn summary_single_image() -> Outcome {
    let s = scored(1);
    let m = err(summarize(std::slice::from_ref(&s), "d"))?;
    ensure!(m.n_images == 1, "n_images {}", m.n_images);
    for (got, want) in [
        (m.consistency, s.consistency),
        (m.consistency_unscaled, s.consistency_unscaled),
        (m.reliability, s.reliability),
        (m.ps, s.ps),
        (m.es, s.es),
        (m.ac, s.ac),
        (m.atc, s.atc),
    ] {
        close("mean", got, want, 0.0)?;
    }
    Ok(())
}

fn summary_duplicate_image() -> Outcome {
    let s = scored(2);
    let one = err(summarize(std::slice::from_ref(&s), "d"))?;
    let two = err(summarize(&[s.clone(), s], "d"))?;
    close("consistency", two.consistency, one.consistency, 1e-15)?;
    close("reliability", two.reliability, one.reliability, 1e-15)
}

fn summary_two_images() -> Outcome {
    let mut a = scored(3);
    let mut c = scored(4);
    a.reliability = 0.2;
    c.reliability = 0.6;
    close("mean", err(summarize(&[a, c], "d"))?.reliability, 0.4, TOL)
}

// ---- evaluation

fn match_single() -> Outcome {
    let gt = b(0., 0., 10., 10.);
    let pred = b(0., 0., 10., 9.);
    close("iou", iou(&pred, &gt), 0.9, TOL)?;
    let m = match_predictions(&[pred], &[gt], 0.5);
    ensure!(m.matched_gt == vec![Some(0)], "got {m:?}");
    Ok(())
}

fn match_two_on_one() -> Outcome {
    let gt = b(0., 0., 10., 10.);
    let m = match_predictions(&[b(0., 0., 10., 9.), b(0., 1., 10., 10.)], &[gt], 0.5);
    ensure!(m.matched_gt == vec![Some(0), None], "got {m:?}");
    Ok(())
}

fn match_below_threshold() -> Outcome {
    let gt = b(0., 0., 10., 10.);
    let pred = b(0., 0., 10., 4.5);
    close("iou", iou(&pred, &gt), 0.45, TOL)?;
    let m = match_predictions(&[pred], &[gt], 0.5);
    ensure!(m.matched_gt == vec![None], "got {m:?}");
    Ok(())
}

fn ap_all_matched() -> Outcome {
    close("ap", average_precision(&[(0.9, true), (0.7, true), (0.2, true)], 3).unwrap(), 1.0, 0.0)
}

fn ap_no_predictions() -> Outcome {
    close("ap", average_precision(&[], 3).unwrap(), 0.0, 0.0)
}

fn ap_tp_then_fp() -> Outcome {
    let gts = [Gt {
        image: 0,
        rect: [0., 0., 10., 10.],
        class: 0,
    }];
    let dets = [
        Det {
            image: 0,
            rect: [0., 0., 10., 10.],
            score: 0.9,
            class: 0,
        },
        Det {
            image: 0,
            rect: [50., 50., 60., 60.],
            score: 0.8,
            class: 0,
        },
    ];
    let want = oracle::brute_ap(&dets, &gts, 0, 0.5, 1).unwrap();
    close("oracle", want, 1.0, 0.0)?;
    close("ap", average_precision(&[(0.9, true), (0.8, false)], 1).unwrap(), want, 0.0)
}

fn gt_record(id: &str, finals: Vec<(BBox, f64, u32)>, gt: Vec<(BBox, u32)>) -> ImageRecord {
    ImageRecord {
        image_id: id.into(),
        candidates: vec![],
        finals: Some(
            finals
                .into_iter()
                .map(|(bbox, confidence, class_id)| FinalPrediction {
                    bbox,
                    confidence,
                    class_id,
                    associated: Some(vec![]),
                })
                .collect(),
        ),
        ground_truth: Some(gt.into_iter().map(|(bbox, class_id)| GroundTruthBox { bbox, class_id }).collect()),
    }
}

fn map_perfect_detector() -> Outcome {
    let mut r = gen::rng(8);
    let recs: Vec<ImageRecord> = (0..20)
        .map(|i| {
            let gt: Vec<(BBox, u32)> = (0..r.gen_range(1..5))
                .map(|k| (gen::random_box(&mut r, 40.0 * k as f64, 30.0), r.gen_range(0..3)))
                .collect();
            let finals = gt.iter().map(|&(bb, c)| (bb, r.gen_range(0.0..1.0), c)).collect();
            gt_record(&format!("{i}"), finals, gt)
        })
        .collect();
    close("map", err(evaluate_map(&recs))?.map, 1.0, 0.0)
}

fn map_no_predictions() -> Outcome {
    let recs: Vec<ImageRecord> = (0..3)
        .map(|i| gt_record(&format!("{i}"), vec![], vec![(b(0., 0., 5., 5.), 0)]))
        .collect();
    close("map", err(evaluate_map(&recs))?.map, 0.0, 0.0)
}

/// Three images, two classes, five boxes or fewer each, with duplicates,
/// misses, a wrong-class hit and matches at borderline IoU.
pub fn three_image_fixture() -> Vec<ImageRecord> {
    vec![
        gt_record(
            "a",
            vec![
                (b(0., 0., 10., 10.), 0.9, 0),
                (b(1., 1., 11., 11.), 0.8, 0),
                (b(20., 20., 30., 28.), 0.6, 1),
                (b(40., 40., 50., 50.), 0.3, 0),
            ],
            vec![(b(0., 0., 10., 10.), 0), (b(20., 20., 30., 30.), 1)],
        ),
        gt_record(
            "b",
            vec![(b(0., 0., 8., 10.), 0.7, 0), (b(30., 0., 40., 10.), 0.95, 1)],
            vec![(b(0., 0., 10., 10.), 0), (b(30., 0., 40., 10.), 0), (b(60., 60., 70., 70.), 1)],
        ),
        gt_record(
            "c",
            vec![(b(5., 5., 15., 15.), 0.5, 1), (b(5., 5., 15., 13.), 0.85, 1), (b(100., 0., 110., 9.), 0.4, 0)],
            vec![(b(5., 5., 15., 15.), 1), (b(100., 0., 110., 10.), 0)],
        ),
    ]
}

pub fn to_oracle(records: &[ImageRecord]) -> (Vec<Det>, Vec<Gt>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for (image, r) in records.iter().enumerate() {
        for f in r.final_predictions() {
            dets.push(Det {
                image,
                rect: f.bbox.to_array(),
                score: f.confidence,
                class: f.class_id,
            });
        }
        for g in r.ground_truth.as_deref().unwrap_or(&[]) {
            gts.push(Gt {
                image,
                rect: g.bbox.to_array(),
                class: g.class_id,
            });
        }
    }
    (dets, gts)
}

fn map_three_image_fixture() -> Outcome {
    let recs = three_image_fixture();
    let (dets, gts) = to_oracle(&recs);
    let (want, per_t) = oracle::brute_map(&dets, &gts, recs.len()).unwrap();
    let got = err(evaluate_map(&recs))?;
    for (t, (&g, &w)) in got.per_threshold.iter().zip(&per_t).enumerate() {
        close(&format!("threshold {t}"), g, w, TOL)?;
    }
    ensure!(want > 0.1 && want < 0.9, "fixture is not discriminative: {want}");
    close("map", got.map, want, TOL)
}

// ---- regression

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

fn affine_fixture() -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows = vec![
        vec![0.1, 0.9],
        vec![0.3, 0.2],
        vec![0.5, 0.7],
        vec![0.8, 0.4],
        vec![0.2, 0.5],
        vec![0.9, 0.1],
    ];
    let targets = rows.iter().map(|r| 0.05 - 0.4 * r[0] + 0.7 * r[1]).collect();
    (rows, targets)
}

fn ols_exact_affine() -> Outcome {
    let (rows, targets) = affine_fixture();
    let m = err(fit(&rows, &targets, &names(&["c", "r"])))?;
    for (got, want) in m.weights.iter().zip([0.05, -0.4, 0.7]) {
        close("weight", *got, want, 1e-12)?;
    }
    for (row, y) in rows.iter().zip(&targets) {
        close("residual", err(m.predict_features(row))?, *y, 1e-12)?;
    }
    Ok(())
}

fn ols_constant_column() -> Outcome {
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, 0.5]).collect();
    let targets: Vec<f64> = (0..6).map(|i| i as f64).collect();
    match fit(&rows, &targets, &names(&["x", "flat"])) {
        Err(Error::RankDeficient { column, .. }) => {
            ensure!(column == "flat", "blamed {column}");
            Ok(())
        }
        other => Err(format!("expected rank deficiency, got {other:?}")),
    }
}

fn ols_matches_pseudo_inverse() -> Outcome {
    let rows = vec![
        vec![0.12, 0.80],
        vec![0.35, 0.41],
        vec![0.50, 0.66],
        vec![0.77, 0.15],
        vec![0.21, 0.93],
    ];
    let targets = vec![0.61, 0.33, 0.48, 0.02, 0.71];
    let want = oracle::pinv_ols(&rows, &targets);
    let got = err(fit(&rows, &targets, &names(&["c", "r"])))?;
    for (g, w) in got.weights.iter().zip(&want) {
        close("weight", *g, *w, 1e-8)?;
    }
    Ok(())
}

fn predict_intercept_only() -> Outcome {
    let model = RegressionModel {
        feature_names: names(&["consistency", "reliability"]),
        weights: vec![0.3, 0.0, 0.0],
        split: None,
    };
    let mut r = gen::rng(3);
    for _ in 0..50 {
        let f = [(); 8].map(|_| r.gen_range(-1.0..1.0));
        close("estimate", err(model.predict(&summary("d", "s", 1, f, 0.5)))?, 0.3, 0.0)?;
    }
    Ok(())
}

fn predict_reproduces_affine_targets() -> Outcome {
    let (rows, targets) = affine_fixture();
    let m = err(fit(&rows, &targets, &names(&["consistency", "reliability"])))?;
    for (row, y) in rows.iter().zip(&targets) {
        let s = summary("d", "s", 1, [row[0], 0., 0., row[1], 0., 0., 0., 0.], *y);
        close("estimate", err(m.predict(&s))?, *y, 1e-8)?;
    }
    Ok(())
}

fn piecewise_routes_by_threshold() -> Outcome {
    let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let targets: Vec<f64> = xs.iter().map(|&x| if x <= 0.5 { 0.04 * x } else { x - 0.3 }).collect();
    let m = err(fit_piecewise(&rows, &targets, &names(&["x"]), PIECEWISE_THRESHOLD))?;
    let split = m.split.as_ref().ok_or("no split")?;
    close("threshold", split.threshold, 0.05, 0.0)?;
    close("low intercept", split.low[0], 0.0, 1e-12)?;
    close("low slope", split.low[1], 0.04, 1e-12)?;
    close("high intercept", split.high[0], -0.3, 1e-12)?;
    close("high slope", split.high[1], 1.0, 1e-12)?;
    for x in [0.0, 0.1, 0.2, 0.3, 0.6, 0.9] {
        let global = m.weights[0] + m.weights[1] * x;
        let regime = if global < 0.05 { &split.low } else { &split.high };
        close("routed", err(m.predict_features(&[x]))?, regime[0] + regime[1] * x, 1e-12)?;
    }
    Ok(())
}

/// Three sources, each with three degraded summaries and a clean one.
pub fn toy_groups() -> Vec<DatasetSummary> {
    let mut out = Vec::new();
    let mut r = gen::rng(77);
    for src in ["a", "b", "c"] {
        for sev in 0..=3u8 {
            let c: f64 = r.gen_range(0.0..0.3);
            let rel: f64 = r.gen_range(0.2..1.0);
            let map = (0.1 - 0.5 * c + 0.6 * rel + r.gen_range(-0.05..0.05f64)).clamp(0.0, 1.0);
            let f = [c, c + 0.2, c * 0.8, rel, rel * 0.9, -rel, 0.3, rel];
            out.push(summary(&format!("{src}/{sev}"), src, sev, f, map));
        }
    }
    out
}

fn loo_matches_refit_oracle() -> Outcome {
    let sums = toy_groups();
    let rep = err(leave_one_out(&sums, &Method::pcr(), &LooOptions::default()))?;
    let mut sq = 0.0;
    for (k, src) in ["a", "b", "c"].iter().enumerate() {
        let train: Vec<&DatasetSummary> = sums.iter().filter(|s| s.source.as_deref() != Some(src)).collect();
        let rows: Vec<Vec<f64>> = train.iter().map(|s| vec![s.consistency, s.reliability]).collect();
        let ys: Vec<f64> = train.iter().map(|s| s.true_map.unwrap()).collect();
        let w = oracle::pinv_ols(&rows, &ys);
        let test = sums
            .iter()
            .find(|s| s.source.as_deref() == Some(src) && s.severity == Some(0))
            .unwrap();
        let est = w[0] + w[1] * test.consistency + w[2] * test.reliability;
        let h = &rep.held_out[k];
        ensure!(h.source == *src, "fold order {}", h.source);
        close("fold estimate", h.estimate_raw, est, 1e-9)?;
        sq += (est - test.true_map.unwrap()).powi(2);
    }
    close("rmse", rep.rmse, (sq / 3.0).sqrt(), 1e-9)
}

/// Every summary shares one mAP: the fit collapses to the intercept and every
/// held-out estimate equals that mAP. Fully identical summaries (features
/// too) are rank-deficient and rejected, which is checked as well.
fn loo_common_map() -> Outcome {
    let mut sums = toy_groups();
    for s in &mut sums {
        s.true_map = Some(0.42);
    }
    let rep = err(leave_one_out(&sums, &Method::pcr(), &LooOptions::default()))?;
    for h in &rep.held_out {
        close("estimate", h.estimate_raw, 0.42, 1e-9)?;
    }
    ensure!(rep.rmse < 1e-9, "rmse {}", rep.rmse);

    let same: Vec<DatasetSummary> = ["a", "b", "c"]
        .iter()
        .flat_map(|src| (0..3u8).map(move |sev| summary("d", src, sev, [0.1, 0.2, 0.1, 0.6, 0.5, -0.5, 0.3, 0.6], 0.42)))
        .collect();
    match leave_one_out(&same, &Method::pcr(), &LooOptions::default()) {
        Err(Error::RankDeficient { .. }) => Ok(()),
        other => Err(format!("identical summaries should be rank-deficient, got {other:?}")),
    }
}

fn statistics_identical() -> Outcome {
    let x = [0.1, 0.4, 0.3, 0.9];
    let s = err(statistics(&x, &x))?;
    ensure!(s.rmse == 0.0, "rmse {}", s.rmse);
    close("pearson", s.pearson.unwrap(), 1.0, TOL)?;
    close("spearman", s.spearman.unwrap(), 1.0, TOL)
}

fn statistics_monotone_transform() -> Outcome {
    let x: Vec<f64> = (1..=8).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    let s = err(statistics(&x, &y))?;
    close("spearman", s.spearman.unwrap(), 1.0, TOL)?;
    ensure!(s.pearson.unwrap() < 1.0, "pearson {:?}", s.pearson);
    Ok(())
}

fn statistics_two_points() -> Outcome {
    let s = err(statistics(&[1.0, 2.0], &[2.0, 1.0]))?;
    close("pearson", s.pearson.unwrap(), -1.0, 1e-12)
}

// ---- synthetic meta-dataset

fn total_miss_empties_pools() -> Outcome {
    let deg = DegradationParams {
        miss_rate: 1.0,
        fp_rate: 0.0,
        ..DegradationParams::noiseless()
    };
    let scene = SourceSpec::default_bank(0, 30)[0].scene.clone();
    let data = err(generate_dataset(&scene, &deg, 1))?;
    ensure!(data.iter().all(|r| r.candidates.is_empty()), "some pool is not empty");
    Ok(())
}

fn noiseless_detector_is_perfect() -> Outcome {
    for src in SourceSpec::default_bank(0, 30) {
        let data = err(generate_dataset(&src.scene, &DegradationParams::noiseless(), 1))?;
        let resolved: Vec<ImageRecord> = data.iter().map(|r| r.resolve(&PostProcess::default())).collect();
        for r in &resolved {
            let key = |b: &BBox| b.to_array().map(f64::to_bits);
            let mut finals: Vec<_> = r.final_predictions().iter().map(|f| (key(&f.bbox), f.class_id)).collect();
            let mut gt: Vec<_> = r.ground_truth.as_ref().unwrap().iter().map(|g| (key(&g.bbox), g.class_id)).collect();
            finals.sort_unstable();
            gt.sort_unstable();
            ensure!(finals == gt, "{}: finals differ from ground truth", r.image_id);
        }
        close("map", err(evaluate_map(&resolved))?.map, 1.0, 0.0)?;
    }
    Ok(())
}

fn severity_sweep_decreases() -> Outcome {
    let meta = default_meta();
    for src in ["street", "highway", "parking"] {
        let means: Vec<f64> = (1..=5u8)
            .map(|sev| {
                let m: Vec<f64> = meta
                    .iter()
                    .filter(|s| s.source.as_deref() == Some(src) && s.severity == Some(sev))
                    .map(|s| s.true_map.unwrap())
                    .collect();
                m.iter().sum::<f64>() / m.len() as f64
            })
            .collect();
        ensure!(means.windows(2).all(|w| w[1] < w[0]), "{src}: mean mAP by severity {means:?}");
    }
    Ok(())
}

fn manifest_size() -> Outcome {
    let bank = SourceSpec::default_bank(0, 2);
    let n = meta_plan(&bank, &Variant::default_set()).len();
    ensure!(n == bank.len() * 51, "{n} entries for {} sources", bank.len());
    Ok(())
}

fn regeneration_is_byte_identical() -> Outcome {
    let bank = SourceSpec::default_bank(9, 3);
    let variants = &Variant::default_set()[..2];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let m = err(build_meta(&bank, variants, dirs[0].path()))?;
    err(build_meta(&bank, variants, dirs[1].path()))?;
    let files = std::iter::once(std::path::PathBuf::from("manifest.json")).chain(m.datasets.iter().map(|d| d.path.clone()));
    for f in files {
        let a = std::fs::read(dirs[0].path().join(&f)).unwrap();
        let c = std::fs::read(dirs[1].path().join(&f)).unwrap();
        ensure!(a == c, "{} differs", f.display());
    }
    Ok(())
}

fn map_span_across_variants() -> Outcome {
    for src in ["street", "highway", "parking"] {
        let maps: Vec<f64> = default_meta()
            .iter()
            .filter(|s| s.source.as_deref() == Some(src) && s.severity != Some(0))
            .map(|s| s.true_map.unwrap())
            .collect();
        ensure!(maps.len() == 50, "{src}: {} variants", maps.len());
        let lo = maps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = maps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure!(hi - lo >= 0.30, "{src}: mAP spans only {lo:.3}..{hi:.3}");
    }
    Ok(())
}

/// Mean within-object Spearman correlation between candidate confidence and
/// IoU with the object, over objects with at least three candidates.
pub fn confidence_iou_rank_correlation(records: &[ImageRecord]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in records {
        for g in r.ground_truth.as_deref().unwrap_or(&[]) {
            let pairs: Vec<(f64, f64)> = r
                .candidates
                .iter()
                .filter(|c| c.class_id == g.class_id)
                .map(|c| (c.confidence, iou(&c.bbox, &g.bbox)))
                .filter(|&(_, v)| v >= 0.5)
                .collect();
            if pairs.len() < 3 {
                continue;
            }
            let (conf, ious): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(Some(rho)) = pcr::regression::spearman(&conf, &ious) {
                total += rho;
                n += 1;
            }
        }
    }
    total / n.max(1) as f64
}

fn confidence_tracks_localization() -> Outcome {
    for src in SourceSpec::default_bank(0, 100) {
        for (v, variant) in Variant::default_set().iter().enumerate().step_by(3) {
            let deg = variant.apply(&src.base, 3);
            let data = err(generate_dataset(&src.scene, &deg, v as u64 + 1))?;
            let rho = confidence_iou_rank_correlation(&data);
            ensure!(rho > 0.0, "{}/{}: mean rank correlation {rho}", src.name, variant.name);
        }
    }
    Ok(())
}

// ---- command-line pipeline

fn noiseless_dump_scores_near_one() -> Outcome {
    let scene = SourceSpec::default_bank(0, 50)[1].scene.clone();
    let data = err(generate_dataset(&scene, &DegradationParams::noiseless(), 1))?;
    let (_, s) = err(summarize_records(&data, &ScoreConfig::default(), "noiseless"))?;
    close("unscaled consistency", s.consistency_unscaled, 1.0, 1e-12)?;
    ensure!(s.reliability > 0.99, "reliability {}", s.reliability);
    ensure!(s.true_map == Some(1.0), "true mAP {:?}", s.true_map);
    Ok(())
}

fn empty_dump_is_an_error() -> Outcome {
    match summarize_records(&[], &ScoreConfig::default(), "empty") {
        Err(e @ Error::NoImages) => {
            ensure!(e.to_string() == "no images", "message {e}");
            ensure!(e.exit_code() == 2, "exit code {}", e.exit_code());
            Ok(())
        }
        other => Err(format!("expected `no images`, got {other:?}")),
    }
}

fn rescoring_is_identical() -> Outcome {
    let bank = SourceSpec::default_bank(4, 40);
    let deg = Variant::default_set()[5].apply(&bank[2].base, 4);
    let data = err(generate_dataset(&bank[2].scene, &deg, 6))?;
    let a = err(summarize_records(&data, &ScoreConfig::default(), "d"))?;
    let c = err(summarize_records(&data, &ScoreConfig::default(), "d"))?;
    ensure!(
        serde_json::to_string(&a.1).unwrap() == serde_json::to_string(&c.1).unwrap()
            && serde_json::to_string(&a.0).unwrap() == serde_json::to_string(&c.0).unwrap(),
        "outputs differ"
    );
    Ok(())
}

pub fn all() -> Vec<Check> {
    vec![
        ("iou_identity", iou_identity),
        ("iou_disjoint", iou_disjoint),
        ("iou_partial_overlap", iou_partial_overlap),
        ("merge_singleton", merge_singleton),
        ("merge_pair", merge_pair),
        ("merge_contains_members", merge_contains_members),
        ("closeness_coincident", closeness_coincident),
        ("closeness_offset", closeness_offset),
        ("closeness_scale_invariant", closeness_scale_invariant),
        ("nms_single_candidate", nms_single_candidate),
        ("nms_full_overlap", nms_full_overlap),
        ("nms_disjoint", nms_disjoint),
        ("associate_identical", associate_identical),
        ("associate_class_gate", associate_class_gate),
        ("associate_overlapping_lists", associate_overlapping_lists),
        ("dump_empty_file", dump_empty_file),
        ("dump_round_trip", dump_round_trip),
        ("dump_missing_candidates", dump_missing_candidates),
        ("sigma_c_midpoint", sigma_c_midpoint),
        ("sigma_c_at_zero", sigma_c_at_zero),
        ("sigma_c_monotone", sigma_c_monotone),
        ("sigma_r_midpoint", sigma_r_midpoint),
        ("sigma_r_at_point_nine", sigma_r_at_point_nine),
        ("sigma_r_range", sigma_r_range),
        ("self_merge_scores_one", self_merge_scores_one),
        ("coincident_centers_half_iou", coincident_centers_half_iou),
        ("prediction_score_in_unit_interval", prediction_score_in_unit_interval),
        ("image_consistency_one_final", image_consistency_one_final),
        ("image_consistency_no_finals", image_consistency_no_finals),
        ("image_consistency_two_finals", image_consistency_two_finals),
        ("reliability_two_disjoint_finals", reliability_two_disjoint_finals),
        ("reliability_all_below_threshold", reliability_all_below_threshold),
        ("reliability_full_cover", reliability_full_cover),
        ("baselines_certain_final", baselines_certain_final),
        ("baselines_entropy_half", baselines_entropy_half),
        ("baselines_atc_half", baselines_atc_half),
        ("summary_single_image", summary_single_image),
        ("summary_duplicate_image", summary_duplicate_image),
        ("summary_two_images", summary_two_images),
        ("match_single", match_single),
        ("match_two_on_one", match_two_on_one),
        ("match_below_threshold", match_below_threshold),
        ("ap_all_matched", ap_all_matched),
        ("ap_no_predictions", ap_no_predictions),
        ("ap_tp_then_fp", ap_tp_then_fp),
        ("map_perfect_detector", map_perfect_detector),
        ("map_no_predictions", map_no_predictions),
        ("map_three_image_fixture", map_three_image_fixture),
        ("ols_exact_affine", ols_exact_affine),
        ("ols_constant_column", ols_constant_column),
        ("ols_matches_pseudo_inverse", ols_matches_pseudo_inverse),
        ("predict_intercept_only", predict_intercept_only),
        ("predict_reproduces_affine_targets", predict_reproduces_affine_targets),
        ("piecewise_routes_by_threshold", piecewise_routes_by_threshold),
        ("loo_matches_refit_oracle", loo_matches_refit_oracle),
        ("loo_common_map", loo_common_map),
        ("statistics_identical", statistics_identical),
        ("statistics_monotone_transform", statistics_monotone_transform),
        ("statistics_two_points", statistics_two_points),
        ("total_miss_empties_pools", total_miss_empties_pools),
        ("noiseless_detector_is_perfect", noiseless_detector_is_perfect),
        ("severity_sweep_decreases", severity_sweep_decreases),
        ("manifest_size", manifest_size),
        ("regeneration_is_byte_identical", regeneration_is_byte_identical),
        ("map_span_across_variants", map_span_across_variants),
        ("confidence_tracks_localization", confidence_tracks_localization),
        ("noiseless_dump_scores_near_one", noiseless_dump_scores_near_one),
        ("empty_dump_is_an_error", empty_dump_is_an_error),
        ("rescoring_is_identical", rescoring_is_identical),
    ]
}

/// Runs every check, returning the failures.
pub fn run_all() -> Vec<(&'static str, String)> {
    all()
        .into_iter()
        .filter_map(|(name, f)| f().err().map(|e| (name, e)))
        .collect()
}
