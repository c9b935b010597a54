//! Seeded synthetic meta-datasets.
//!
//! A source is a bank of simulated scenes plus a baseline detector profile.
//! Each degradation variant raises some mix of localization noise, missed
//! objects, spurious clusters and confidence attenuation with severity.
//! The simulated detector emits pre-NMS candidate clusters whose confidence
//! falls as a candidate's overlap with its object falls.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{write_records, CandidateBox, ClassId, GroundTruthBox, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Scene layout for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: f64,
    pub height: f64,
    /// Inclusive range of objects per image.
    pub objects_per_image: (u32, u32),
    /// Inclusive range of the object's geometric-mean side length, in pixels.
    pub object_size: (f64, f64),
    pub num_classes: u32,
    pub images_per_dataset: usize,
    pub seed: u64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, message: String| Err(Error::InvalidParam { name, message });
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("extent", format!("{}x{}", self.width, self.height));
        }
        if self.objects_per_image.0 > self.objects_per_image.1 {
            return bad("objects_per_image", format!("{:?}", self.objects_per_image));
        }
        let (lo, hi) = self.object_size;
        // aspect ratios up to 2 stretch a side by sqrt(2)
        if !(lo > 0.0 && lo <= hi && hi * std::f64::consts::SQRT_2 < self.width.min(self.height)) {
            return bad("object_size", format!("{:?} does not fit the extent", self.object_size));
        }
        if self.num_classes == 0 {
            return bad("num_classes", "must be positive".into());
        }
        if self.images_per_dataset == 0 {
            return bad("images_per_dataset", "must be positive".into());
        }
        Ok(())
    }
}

/// Simulated detector behavior at one severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// 0 for the untransformed test set, 1..=5 for degraded variants.
    pub severity: u8,
    /// Per-edge candidate jitter std, as a fraction of the object's side.
    pub localization_noise: f64,
    /// Fraction by which true-positive confidence is scaled down.
    pub attenuation: f64,
    /// Probability an object yields no candidates.
    pub miss_rate: f64,
    /// Mean number of spurious tight candidate clusters per image.
    pub fp_rate: f64,
    /// Mean number of diffuse low-confidence background clusters per image.
    pub noise_rate: f64,
    /// Inclusive range of candidates emitted per detected object.
    pub candidates_per_object: (u32, u32),
    /// Std of additive confidence noise.
    pub confidence_noise: f64,
    /// Peak true-positive confidence of an unattenuated large object.
    pub confidence_scale: f64,
}

impl DegradationParams {
    /// A detector that reproduces the ground truth exactly.
    pub fn noiseless() -> Self {
        Self {
            severity: 0,
            localization_noise: 0.0,
            attenuation: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            noise_rate: 0.0,
            candidates_per_object: (3, 8),
            confidence_noise: 0.0,
            confidence_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, message: String| Err(Error::InvalidParam { name, message });
        if self.severity > 5 {
            return bad("severity", format!("{} not in 0..=5", self.severity));
        }
        for (name, p) in [("attenuation", self.attenuation), ("miss_rate", self.miss_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name, format!("{p} not in [0, 1]"));
            }
        }
        for (name, v) in [
            ("localization_noise", self.localization_noise),
            ("fp_rate", self.fp_rate),
            ("noise_rate", self.noise_rate),
            ("confidence_noise", self.confidence_noise),
            ("confidence_scale", self.confidence_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("{v} must be nonnegative"));
            }
        }
        let (lo, hi) = self.candidates_per_object;
        if lo == 0 || lo > hi {
            return bad("candidates_per_object", format!("{:?}", self.candidates_per_object));
        }
        Ok(())
    }
}

/// A corruption-like family: how strongly each degradation grows with severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub localization: f64,
    pub miss: f64,
    pub clutter: f64,
    pub attenuation: f64,
    pub background: f64,
}

/// Increment of each degradation per severity step at unit weight.
const LOCALIZATION_STEP: f64 = 0.035;
const MISS_STEP: f64 = 0.057;
const CLUTTER_STEP: f64 = 0.85;
const ATTENUATION_STEP: f64 = 0.085;
const BACKGROUND_STEP: f64 = 0.71;

impl Variant {
    fn new(name: &str, [localization, miss, clutter, attenuation, background]: [f64; 5]) -> Self {
        Self {
            name: name.into(),
            localization,
            miss,
            clutter,
            attenuation,
            background,
        }
    }

    /// Detector behavior on `base` degraded to `severity` (0 returns `base`).
    pub fn apply(&self, base: &DegradationParams, severity: u8) -> DegradationParams {
        let s = severity as f64;
        DegradationParams {
            severity,
            localization_noise: base.localization_noise + self.localization * LOCALIZATION_STEP * s,
            attenuation: (base.attenuation + self.attenuation * ATTENUATION_STEP * s).min(0.95),
            miss_rate: (base.miss_rate + self.miss * MISS_STEP * s).min(0.95),
            fp_rate: base.fp_rate + self.clutter * CLUTTER_STEP * s,
            noise_rate: base.noise_rate + self.background * BACKGROUND_STEP * s,
            ..base.clone()
        }
    }

    /// Ten families, each dominated by a different degradation or mixture.
    pub fn default_set() -> Vec<Variant> {
        vec![
            Variant::new("jitter", [1.0, 0.0, 0.0, 0.2, 0.0]),
            Variant::new("dropout", [0.0, 0.6, 0.0, 0.6, 0.0]),
            Variant::new("clutter", [0.0, 0.1, 1.0, 0.2, 0.0]),
            Variant::new("dim", [0.0, 0.2, 0.0, 1.0, 0.0]),
            Variant::new("blur", [0.7, 0.3, 0.0, 0.5, 0.0]),
            Variant::new("noise", [0.3, 0.2, 0.3, 0.4, 1.0]),
            Variant::new("fog", [0.2, 0.6, 0.2, 0.7, 0.0]),
            Variant::new("snow", [0.4, 0.4, 0.6, 0.2, 0.5]),
            Variant::new("pixelate", [0.9, 0.1, 0.3, 0.3, 0.0]),
            Variant::new("contrast", [0.3, 0.5, 0.3, 0.8, 0.0]),
        ]
    }
}

/// A named scene bank with its clean detector profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub scene: SceneParams,
    pub base: DegradationParams,
}

impl SourceSpec {
    /// Three sources differing in object density, object size and baseline
    /// detector quality. `seed` is mixed with each source's index.
    pub fn default_bank(seed: u64, images_per_dataset: usize) -> Vec<SourceSpec> {
        let source = |idx: u64, name: &str, objects, size, classes, base: DegradationParams| SourceSpec {
            name: name.into(),
            scene: SceneParams {
                width: 640.0,
                height: 480.0,
                objects_per_image: objects,
                object_size: size,
                num_classes: classes,
                images_per_dataset,
                seed: derive_seed(seed, &[idx]),
            },
            base,
        };
        let profile = |loc, miss, fp, noise, att, scale| DegradationParams {
            severity: 0,
            localization_noise: loc,
            attenuation: att,
            miss_rate: miss,
            fp_rate: fp,
            noise_rate: noise,
            candidates_per_object: (3, 10),
            confidence_noise: 0.05,
            confidence_scale: scale,
        };
        vec![
            source(0, "street", (2, 8), (24.0, 160.0), 3, profile(0.04, 0.03, 0.5, 1.3, 0.0, 0.84)),
            source(1, "highway", (3, 10), (16.0, 90.0), 2, profile(0.06, 0.06, 0.55, 0.1, 0.05, 0.77)),
            source(2, "parking", (1, 6), (40.0, 220.0), 2, profile(0.03, 0.02, 1.7, 1.8, 0.0, 0.72)),
        ]
    }
}

/// splitmix64 chained over `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

fn sample_scene(scene: &SceneParams, rng: &mut ChaCha8Rng) -> Vec<GroundTruthBox> {
    let n = rng.gen_range(scene.objects_per_image.0..=scene.objects_per_image.1);
    let mut objects: Vec<GroundTruthBox> = Vec::with_capacity(n as usize);
    let mut attempts = 0;
    while objects.len() < n as usize && attempts < 50 * (n as usize + 1) {
        attempts += 1;
        let side = rng.gen_range(scene.object_size.0..=scene.object_size.1);
        let aspect: f64 = rng.gen_range(-1.0f64..=1.0).exp2().sqrt();
        let (w, h) = (side * aspect, side / aspect);
        let x0 = rng.gen_range(0.0..=(scene.width - w));
        let y0 = rng.gen_range(0.0..=(scene.height - h));
        let bbox = BBox::new(x0, y0, x0 + w, y0 + h).expect("positive size");
        let class_id = rng.gen_range(0..scene.num_classes) as ClassId;
        // keep objects well separated so NMS never merges two of them
        if objects.iter().all(|o| iou(&o.bbox, &bbox) < 0.3) {
            objects.push(GroundTruthBox { bbox, class_id });
        }
    }
    objects
}

/// Width of the confidence falloff with (1 - IoU).
const CONFIDENCE_FALLOFF: f64 = 0.28;
/// Jitter of spurious clusters, as a fraction of their size.
const CLUTTER_JITTER: f64 = 0.04;
/// Jitter of background clusters.
const BACKGROUND_JITTER: f64 = 0.16;

fn jitter_box(b: &BBox, std_frac: f64, bias: &[f64; 4], rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = (b.width(), b.height());
    if std_frac == 0.0 && bias.iter().all(|&v| v == 0.0) {
        return *b;
    }
    let n = Normal::new(0.0, std_frac.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut e = [0.0; 4];
    for (k, v) in e.iter_mut().enumerate() {
        *v = bias[k] + if std_frac > 0.0 { n.sample(rng) } else { 0.0 };
    }
    let x0 = b.x_min() + e[0] * w;
    let x1 = b.x_max() + e[2] * w;
    let y0 = b.y_min() + e[1] * h;
    let y1 = b.y_max() + e[3] * h;
    // keep at least a tenth of the original extent
    let x1 = x1.max(x0 + 0.1 * w);
    let y1 = y1.max(y0 + 0.1 * h);
    BBox::new(x0, y0, x1, y1).expect("ordered corners")
}

fn noisy(conf: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    let c = if std > 0.0 {
        conf + Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        conf
    };
    c.clamp(0.0, 1.0)
}

fn simulate_detector(
    scene: &SceneParams,
    deg: &DegradationParams,
    objects: &[GroundTruthBox],
    rng: &mut ChaCha8Rng,
) -> Vec<CandidateBox> {
    let mut candidates = Vec::new();
    let (size_lo, size_hi) = scene.object_size;
    for obj in objects {
        let side = obj.bbox.area().sqrt();
        let size_frac = if size_hi > size_lo {
            ((side - size_lo) / (size_hi - size_lo)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        // small objects are missed more often and localized worse
        let miss = 1.0 - (1.0 - deg.miss_rate).powf(1.3 - 0.6 * size_frac);
        if rng.gen_bool(miss) {
            continue;
        }
        let dimming = deg.attenuation * rng.gen_range(0.5..=1.5);
        let strength = (deg.confidence_scale * (0.93 + 0.07 * size_frac) * (1.0 - dimming)).clamp(0.0, 1.0);
        let spread = deg.localization_noise * (1.3 - 0.6 * size_frac) * (1.0 + (1.0 - strength));
        let bias_dist = Normal::new(0.0, 0.5 * spread.max(f64::MIN_POSITIVE)).expect("finite std");
        let mut bias = [0.0; 4];
        if spread > 0.0 {
            for b in bias.iter_mut() {
                *b = bias_dist.sample(rng);
            }
        }
        let (lo, hi) = deg.candidates_per_object;
        let k_max = lo as f64 + (hi - lo) as f64 * strength;
        let k = rng.gen_range(lo as f64..=k_max.max(lo as f64)).round().max(1.0) as u32;
        for _ in 0..k {
            let bbox = jitter_box(&obj.bbox, spread, &bias, rng);
            let overlap = iou(&bbox, &obj.bbox);
            let falloff = (-(1.0 - overlap).powi(2) / (2.0 * CONFIDENCE_FALLOFF * CONFIDENCE_FALLOFF)).exp();
            candidates.push(CandidateBox {
                bbox,
                confidence: noisy(strength * falloff, deg.confidence_noise, rng),
                class_id: obj.class_id,
            });
        }
    }

    // spurious clusters: a detector repeatedly firing on a region with no object
    let clutter = poisson(deg.fp_rate, rng);
    for _ in 0..clutter {
        let side = rng.gen_range(size_lo..=size_hi);
        let x0 = rng.gen_range(0.0..=(scene.width - side));
        let y0 = rng.gen_range(0.0..=(scene.height - side));
        let region = BBox::new(x0, y0, x0 + side, y0 + side).expect("positive size");
        let class_id = rng.gen_range(0..scene.num_classes) as ClassId;
        let level = rng.gen_range(0.22..=0.42);
        let k = rng.gen_range(1..=3);
        for _ in 0..k {
            candidates.push(CandidateBox {
                bbox: jitter_box(&region, CLUTTER_JITTER, &[0.0; 4], rng),
                confidence: noisy(level, deg.confidence_noise, rng),
                class_id,
            });
        }
    }

    // diffuse background responses: weak, scattered, rarely above threshold
    let background = poisson(deg.noise_rate, rng);
    for _ in 0..background {
        let side = rng.gen_range(size_lo..=size_hi);
        let x0 = rng.gen_range(0.0..=(scene.width - side));
        let y0 = rng.gen_range(0.0..=(scene.height - side));
        let region = BBox::new(x0, y0, x0 + side, y0 + side).expect("positive size");
        let class_id = rng.gen_range(0..scene.num_classes) as ClassId;
        let k = rng.gen_range(1..=4);
        for _ in 0..k {
            candidates.push(CandidateBox {
                bbox: jitter_box(&region, BACKGROUND_JITTER, &[0.0; 4], rng),
                confidence: rng.gen_range(0.05..=0.21),
                class_id,
            });
        }
    }
    candidates
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    // Knuth; means here stay small
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

/// Ground truth for image `index` of a scene bank.
fn scene_objects(scene: &SceneParams, index: usize) -> Vec<GroundTruthBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene.seed, &[index as u64]));
    sample_scene(scene, &mut rng)
}

/// Generates one dataset: the scene bank's images seen through a detector
/// degraded per `deg`. Scenes depend only on `scene.seed`; detector noise on
/// `(scene.seed, variant_id, deg.severity)`.
pub fn generate_dataset(scene: &SceneParams, deg: &DegradationParams, variant_id: u64) -> Result<Vec<ImageRecord>> {
    scene.validate()?;
    deg.validate()?;
    let detector_seed = derive_seed(scene.seed, &[0xD37E_C70A, variant_id, deg.severity as u64]);
    Ok((0..scene.images_per_dataset)
        .map(|i| {
            let objects = scene_objects(scene, i);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(detector_seed, &[i as u64]));
            let candidates = simulate_detector(scene, deg, &objects, &mut rng);
            ImageRecord {
                image_id: format!("{i:05}"),
                candidates,
                finals: None,
                ground_truth: Some(objects),
            }
        })
        .collect())
}

/// One dataset of a meta-dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub source: String,
    /// `"clean"` for the untransformed test set.
    pub variant: String,
    pub severity: u8,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn dataset_id(&self) -> String {
        format!("{}/{}-s{}", self.source, self.variant, self.severity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sources: Vec<String>,
    pub datasets: Vec<ManifestEntry>,
}

pub const CLEAN_VARIANT: &str = "clean";

/// Every (source, variant, severity) combination of a meta-dataset, with the
/// detector parameters and variant id used to generate it.
pub fn meta_plan(bank: &[SourceSpec], variants: &[Variant]) -> Vec<(usize, ManifestEntry, DegradationParams, u64)> {
    let mut plan = Vec::new();
    for (s, src) in bank.iter().enumerate() {
        let entry = |variant: &str, severity: u8, variant_id: u64| ManifestEntry {
            path: PathBuf::from(&src.name).join(format!("{variant}_s{severity}.jsonl")),
            source: src.name.clone(),
            variant: variant.into(),
            severity,
            seed: derive_seed(src.scene.seed, &[0xD37E_C70A, variant_id, severity as u64]),
        };
        for (v, variant) in variants.iter().enumerate() {
            for severity in 1..=5u8 {
                let id = v as u64 + 1;
                plan.push((s, entry(&variant.name, severity, id), variant.apply(&src.base, severity), id));
            }
        }
        plan.push((s, entry(CLEAN_VARIANT, 0, 0), src.base.clone(), 0));
    }
    plan
}

/// Generates every dataset of the plan in memory, in plan order.
pub fn generate_meta(bank: &[SourceSpec], variants: &[Variant]) -> Result<Vec<(ManifestEntry, Vec<ImageRecord>)>> {
    if bank.is_empty() {
        return Err(Error::InvalidParam {
            name: "bank",
            message: "no sources".into(),
        });
    }
    meta_plan(bank, variants)
        .into_par_iter()
        .map(|(s, entry, deg, id)| Ok((entry, generate_dataset(&bank[s].scene, &deg, id)?)))
        .collect()
}

/// Writes one JSON-Lines dump per dataset plus `manifest.json` under `out_dir`.
/// Refuses to overwrite existing files.
pub fn build_meta(bank: &[SourceSpec], variants: &[Variant], out_dir: &Path) -> Result<Manifest> {
    let manifest_path = out_dir.join("manifest.json");
    let plan = meta_plan(bank, variants);
    for path in std::iter::once(manifest_path.clone()).chain(plan.iter().map(|p| out_dir.join(&p.1.path))) {
        if path.exists() {
            return Err(Error::PathCollision(path));
        }
    }
    let datasets = generate_meta(bank, variants)?;
    datasets.par_iter().try_for_each(|(entry, records)| {
        let mut buf = Vec::new();
        write_records(records, &mut buf).expect("writing to memory");
        crate::fsutil::write_atomic(&out_dir.join(&entry.path), &buf)
    })?;
    let manifest = Manifest {
        sources: bank.iter().map(|s| s.name.clone()).collect(),
        datasets: datasets.into_iter().map(|(e, _)| e).collect(),
    };
    crate::fsutil::write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}
