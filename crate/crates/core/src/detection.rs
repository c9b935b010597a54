//! Per-image detector output: candidate pools, final predictions, NMS with
//! suppression tracking, IoU-based association and the JSON-Lines dump format.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::geometry::{iou, BBox};

pub type ClassId = u32;

/// A pre-NMS box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateBox {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: ClassId,
}

/// A post-NMS box. `associated` indexes into the image's candidate pool and
/// is `None` until NMS or [`associate`] has filled it in.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalPrediction {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: ClassId,
    pub associated: Option<Vec<usize>>,
}

impl FinalPrediction {
    pub fn associated_indices(&self) -> &[usize] {
        self.associated.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub class_id: ClassId,
}

/// One image: its candidate pool, optional finals and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub candidates: Vec<CandidateBox>,
    pub finals: Option<Vec<FinalPrediction>>,
    pub ground_truth: Option<Vec<GroundTruthBox>>,
}

impl ImageRecord {
    pub fn final_predictions(&self) -> &[FinalPrediction] {
        self.finals.as_deref().unwrap_or(&[])
    }

    /// Deduplicated union of all association lists, in ascending order.
    pub fn pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self
            .final_predictions()
            .iter()
            .flat_map(|f| f.associated_indices().iter().copied())
            .collect();
        pool.sort_unstable();
        pool.dedup();
        pool
    }

    /// Fills in missing finals (by NMS) and missing associations (by NMS
    /// suppression map or IoU test, per `post.association`). Associations
    /// already present are kept verbatim.
    pub fn resolve(&self, post: &PostProcess) -> ImageRecord {
        let finals = match &self.finals {
            None => {
                let kept = nms(&self.candidates, post.iou_threshold, post.score_floor);
                match post.association {
                    AssociationMode::Suppression => kept,
                    AssociationMode::Overlap => {
                        let bare: Vec<FinalPrediction> = kept
                            .into_iter()
                            .map(|f| FinalPrediction {
                                associated: None,
                                ..f
                            })
                            .collect();
                        associate(&bare, &self.candidates, post.association_threshold())
                    }
                }
            }
            Some(finals) if finals.iter().any(|f| f.associated.is_none()) => {
                associate(finals, &self.candidates, post.association_threshold())
            }
            Some(finals) => finals.clone(),
        };
        ImageRecord {
            image_id: self.image_id.clone(),
            candidates: self.candidates.clone(),
            finals: Some(finals),
            ground_truth: self.ground_truth.clone(),
        }
    }
}

/// How candidates are tied to final predictions when a dump does not carry
/// the mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssociationMode {
    /// Use the NMS suppression map (each candidate belongs to one keeper).
    #[default]
    Suppression,
    /// Same-class IoU test against every final (lists may overlap).
    Overlap,
}

/// Detector post-processing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcess {
    pub iou_threshold: f64,
    pub score_floor: f64,
    pub association: AssociationMode,
    /// IoU threshold for [`associate`]; defaults to `iou_threshold`.
    pub association_iou: Option<f64>,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            score_floor: 0.05,
            association: AssociationMode::Suppression,
            association_iou: None,
        }
    }
}

impl PostProcess {
    pub fn association_threshold(&self) -> f64 {
        self.association_iou.unwrap_or(self.iou_threshold)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidParam {
                name: "iou_threshold",
                message: format!("{} not in (0, 1]", self.iou_threshold),
            });
        }
        if !(0.0..1.0).contains(&self.score_floor) {
            return Err(Error::InvalidParam {
                name: "score_floor",
                message: format!("{} not in [0, 1)", self.score_floor),
            });
        }
        if let Some(t) = self.association_iou {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidParam {
                    name: "association_iou",
                    message: format!("{t} not in (0, 1]"),
                });
            }
        }
        Ok(())
    }
}

/// Orders candidate indices by confidence descending, lower index first on ties.
pub(crate) fn by_confidence_desc(conf: impl Fn(usize) -> f64) -> impl Fn(&usize, &usize) -> std::cmp::Ordering {
    move |&a, &b| conf(b).total_cmp(&conf(a)).then(a.cmp(&b))
}

/// Greedy per-class NMS. Every kept box lists itself and the candidates it
/// suppressed in `associated`.
pub fn nms(candidates: &[CandidateBox], iou_threshold: f64, score_floor: f64) -> Vec<FinalPrediction> {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].confidence >= score_floor)
        .collect();
    order.sort_by(by_confidence_desc(|i| candidates[i].confidence));

    let mut suppressed = vec![false; candidates.len()];
    let mut finals = Vec::new();
    for (pos, &keep) in order.iter().enumerate() {
        if suppressed[keep] {
            continue;
        }
        let keeper = &candidates[keep];
        let mut associated = vec![keep];
        for &other in &order[pos + 1..] {
            if suppressed[other] || candidates[other].class_id != keeper.class_id {
                continue;
            }
            if iou(&keeper.bbox, &candidates[other].bbox) >= iou_threshold {
                suppressed[other] = true;
                associated.push(other);
            }
        }
        finals.push(FinalPrediction {
            bbox: keeper.bbox,
            confidence: keeper.confidence,
            class_id: keeper.class_id,
            associated: Some(associated),
        });
    }
    finals
}

/// Assigns each candidate to every same-class final with IoU at or above
/// `iou_threshold`. Existing association lists are replaced.
pub fn associate(
    finals: &[FinalPrediction],
    candidates: &[CandidateBox],
    iou_threshold: f64,
) -> Vec<FinalPrediction> {
    finals
        .iter()
        .map(|f| {
            let associated = candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.class_id == f.class_id && iou(&f.bbox, &c.bbox) >= iou_threshold)
                .map(|(j, _)| j)
                .collect();
            FinalPrediction {
                associated: Some(associated),
                ..f.clone()
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON-Lines dump

#[derive(Debug, Serialize, Deserialize)]
struct WireCandidate {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
    class: ClassId,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireFinal {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
    class: ClassId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    associated: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireGroundTruth {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: ClassId,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    image_id: String,
    candidates: Vec<WireCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    finals: Option<Vec<WireFinal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<WireGroundTruth>>,
}

impl From<&ImageRecord> for WireRecord {
    fn from(r: &ImageRecord) -> Self {
        WireRecord {
            image_id: r.image_id.clone(),
            candidates: r
                .candidates
                .iter()
                .map(|c| WireCandidate {
                    bbox: c.bbox.to_array(),
                    score: c.confidence,
                    class: c.class_id,
                })
                .collect(),
            finals: r.finals.as_ref().map(|fs| {
                fs.iter()
                    .map(|f| WireFinal {
                        bbox: f.bbox.to_array(),
                        score: f.confidence,
                        class: f.class_id,
                        associated: f.associated.clone(),
                    })
                    .collect()
            }),
            ground_truth: r.ground_truth.as_ref().map(|gs| {
                gs.iter()
                    .map(|g| WireGroundTruth {
                        bbox: g.bbox.to_array(),
                        class: g.class_id,
                    })
                    .collect()
            }),
        }
    }
}

impl WireRecord {
    fn into_record(self, location: &Location) -> Result<ImageRecord> {
        let invariant = |field: String, message: String| Error::Invariant {
            location: location.clone(),
            field,
            message,
        };
        let check_box = |field: String, a: [f64; 4]| {
            BBox::from_array(a).map_err(|e| invariant(field, e.to_string()))
        };
        let check_score = |field: String, s: f64| {
            if (0.0..=1.0).contains(&s) {
                Ok(s)
            } else {
                Err(invariant(field, format!("confidence {s} not in [0, 1]")))
            }
        };

        let mut candidates = Vec::with_capacity(self.candidates.len());
        for (j, c) in self.candidates.into_iter().enumerate() {
            candidates.push(CandidateBox {
                bbox: check_box(format!("candidates[{j}].box"), c.bbox)?,
                confidence: check_score(format!("candidates[{j}].score"), c.score)?,
                class_id: c.class,
            });
        }

        let finals = match self.finals {
            None => None,
            Some(fs) => {
                let mut out = Vec::with_capacity(fs.len());
                for (i, f) in fs.into_iter().enumerate() {
                    if let Some(assoc) = &f.associated {
                        let field = format!("finals[{i}].associated");
                        let mut seen = HashSet::with_capacity(assoc.len());
                        for &j in assoc {
                            let Some(c) = candidates.get(j) else {
                                return Err(invariant(field, format!("index {j} out of range")));
                            };
                            if !seen.insert(j) {
                                return Err(invariant(field, format!("duplicate index {j}")));
                            }
                            if c.class_id != f.class {
                                return Err(invariant(
                                    field,
                                    format!("candidate {j} has class {}, final has {}", c.class_id, f.class),
                                ));
                            }
                        }
                    }
                    out.push(FinalPrediction {
                        bbox: check_box(format!("finals[{i}].box"), f.bbox)?,
                        confidence: check_score(format!("finals[{i}].score"), f.score)?,
                        class_id: f.class,
                        associated: f.associated,
                    });
                }
                Some(out)
            }
        };

        let ground_truth = match self.ground_truth {
            None => None,
            Some(gs) => Some(
                gs.into_iter()
                    .enumerate()
                    .map(|(k, g)| {
                        Ok(GroundTruthBox {
                            bbox: check_box(format!("ground_truth[{k}].box"), g.bbox)?,
                            class_id: g.class,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };

        Ok(ImageRecord {
            image_id: self.image_id,
            candidates,
            finals,
            ground_truth,
        })
    }
}

/// Parses one dump line.
pub fn parse_record(line: &str, location: &Location) -> Result<ImageRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| {
        let message = e.to_string();
        if e.is_data() {
            Error::Schema {
                location: location.clone(),
                message,
            }
        } else {
            Error::Json {
                location: location.clone(),
                message,
            }
        }
    })?;
    wire.into_record(location)
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn record_to_line(record: &ImageRecord) -> String {
    serde_json::to_string(&WireRecord::from(record)).expect("dump records always serialize")
}

/// Streaming reader over a JSON-Lines dump. Blank lines are skipped.
pub struct DumpReader<R> {
    lines: std::io::Lines<R>,
    path: Option<PathBuf>,
    line_no: usize,
}

impl<R: BufRead> DumpReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            path: None,
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<ImageRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let location = Location {
                path: self.path.clone(),
                line: self.line_no,
            };
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(Error::io(
                        self.path.clone().unwrap_or_default(),
                        e,
                    )))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_record(&line, &location));
        }
    }
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<DumpReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = DumpReader::new(BufReader::new(file));
    reader.path = Some(path.to_path_buf());
    Ok(reader)
}

pub fn read_dump_all(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    read_dump(path)?.collect()
}

pub fn write_records<'a, W, I>(records: I, mut out: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ImageRecord>,
{
    for r in records {
        out.write_all(record_to_line(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes a dump atomically (temp file + rename).
pub fn write_dump<'a, I>(records: I, path: impl AsRef<Path>) -> Result<()>
where
    I: IntoIterator<Item = &'a ImageRecord>,
{
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    crate::fsutil::write_atomic(path.as_ref(), &buf)
}
