//! 3D video object detection scoring.
//!
//! Predictions are matched greedily in emitted order: each one takes the
//! unused same-category ground-truth box it overlaps most, provided the IoU
//! reaches the threshold. Counts are summed over scenes per category and
//! turned into precision/recall/F1; the headline numbers average those over
//! a fixed class list. Text answers carry no confidences, so "AP" here is
//! class-averaged precision at a single IoU, not area under a PR curve.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, ParseError, Result};
use crate::geometry::{iou_3d, OrientedBox3D};
use crate::protocol::{parse_detection_response, DetectionItem, ParseMode};
use crate::records::{box_from_numbers, read_text};
use crate::report::{Cell, Report, Table};

/// The 20 common ScanNet classes the headline averages run over.
pub const COMMON_CLASSES: [&str; 20] = [
    "chair", "pillow", "cabinet", "table", "lamp", "couch", "desk", "stand", "bed", "backpack", "bathtub", "ottoman",
    "dresser", "bin", "toilet", "refrigerator", "stove", "microwave", "monitor", "computer",
];

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.25;

/// Lowercases, trims and collapses whitespace, then applies an alias table
/// whose keys are themselves normalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryNormalizer {
    aliases: HashMap<String, String>,
}

fn canonical(label: &str) -> String {
    label.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

impl CategoryNormalizer {
    pub fn new<I, K, V>(aliases: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        CategoryNormalizer {
            aliases: aliases
                .into_iter()
                .map(|(k, v)| (canonical(k.as_ref()), canonical(v.as_ref())))
                .collect(),
        }
    }

    pub fn normalize(&self, label: &str) -> String {
        let c = canonical(label);
        self.aliases.get(&c).cloned().unwrap_or(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub label: String,
    pub bbox: OrientedBox3D,
}

impl From<DetectionItem> for LabeledBox {
    fn from(item: DetectionItem) -> Self {
        LabeledBox { label: item.label, bbox: item.bbox }
    }
}

/// Ground truth for one scene, in first-frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGroundTruth {
    pub scene_id: String,
    pub boxes: Vec<LabeledBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchingResult {
    /// Keyed by normalized category.
    pub counts: BTreeMap<String, ClassCounts>,
    pub pairs: Vec<Pairing>,
}

pub fn greedy_match(
    preds: &[LabeledBox],
    gts: &[LabeledBox],
    iou_threshold: f64,
    normalizer: &CategoryNormalizer,
) -> MatchingResult {
    let gt_labels: Vec<String> = gts.iter().map(|g| normalizer.normalize(&g.label)).collect();
    let mut used = vec![false; gts.len()];
    let mut result = MatchingResult::default();

    for (pi, p) in preds.iter().enumerate() {
        let label = normalizer.normalize(&p.label);
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || gt_labels[gi] != label {
                continue;
            }
            let iou = iou_3d(&p.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        let entry = result.counts.entry(label).or_default();
        match best {
            Some((gi, iou)) if iou >= iou_threshold => {
                used[gi] = true;
                entry.tp += 1;
                result.pairs.push(Pairing { pred: pi, gt: gi, iou });
            }
            _ => entry.fp += 1,
        }
    }
    for (gi, label) in gt_labels.into_iter().enumerate() {
        let entry = result.counts.entry(label).or_default();
        if !used[gi] {
            entry.fn_ += 1;
        }
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    /// Quotients with a zero denominator are 0.
    pub fn from_counts(c: &ClassCounts) -> Self {
        let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
        let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Prf { precision, recall, f1 }
    }
}

pub fn per_class_prf(counts: &BTreeMap<String, ClassCounts>) -> BTreeMap<String, Prf> {
    counts.iter().map(|(k, c)| (k.clone(), Prf::from_counts(c))).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MacroScores {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
    /// Classes of the list that occurred in GT or predictions.
    pub classes_used: Vec<String>,
}

/// Unweighted means over the listed classes that occur in `counts` with any
/// GT or prediction; absent classes are skipped.
pub fn macro_average(counts: &BTreeMap<String, ClassCounts>, class_list: &[String]) -> MacroScores {
    let mut out = MacroScores::default();
    let mut sums = [0.0; 3];
    for class in class_list {
        let Some(c) = counts.get(class) else { continue };
        if c.tp + c.fp + c.fn_ == 0 {
            continue;
        }
        let prf = Prf::from_counts(c);
        sums[0] += prf.precision;
        sums[1] += prf.recall;
        sums[2] += prf.f1;
        out.classes_used.push(class.clone());
    }
    let n = out.classes_used.len() as f64;
    if n > 0.0 {
        out.ap = sums[0] / n;
        out.ar = sums[1] / n;
        out.f1 = sums[2] / n;
    }
    out
}

#[derive(Debug, Clone, Deserialize)]
struct BoxRecord {
    label: String,
    #[serde(alias = "box_3d")]
    bbox_3d: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct SceneRecord {
    #[serde(alias = "scene_id")]
    id: String,
    boxes: Vec<BoxRecord>,
}

#[derive(Debug, Clone, Deserialize)]
struct BundleRecord {
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    scenes: Vec<SceneRecord>,
}

/// Detection ground truth: scenes plus the class list averages run over.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBundle {
    pub classes: Vec<String>,
    pub aliases: BTreeMap<String, String>,
    pub scenes: Vec<DetectionGroundTruth>,
}

pub fn parse_detection_bundle(text: &str, origin: &str) -> Result<DetectionBundle> {
    let rec: BundleRecord = serde_json::from_str(text).map_err(|e| Error::Bundle {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let classes = rec
        .classes
        .unwrap_or_else(|| COMMON_CLASSES.iter().map(|s| s.to_string()).collect())
        .iter()
        .map(|c| canonical(c))
        .collect::<Vec<_>>();
    if classes.is_empty() {
        return Err(Error::invalid(format!("{origin}: class list is empty")));
    }
    let mut seen = std::collections::HashSet::new();
    let scenes = rec
        .scenes
        .into_iter()
        .map(|s| {
            if !seen.insert(s.id.clone()) {
                return Err(Error::Bundle { path: origin.to_string(), message: format!("duplicate scene id {:?}", s.id) });
            }
            let boxes = s
                .boxes
                .iter()
                .map(|b| {
                    Ok(LabeledBox {
                        label: b.label.clone(),
                        bbox: box_from_numbers(&b.bbox_3d, &format!("scene {:?} box {:?}", s.id, b.label))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DetectionGroundTruth { scene_id: s.id, boxes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionBundle { classes, aliases: rec.aliases, scenes })
}

pub fn read_detection_bundle(path: &Path) -> Result<DetectionBundle> {
    parse_detection_bundle(&read_text(path)?, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionScores {
    pub iou_threshold: f64,
    pub classes: Vec<String>,
    pub counts: BTreeMap<String, ClassCounts>,
    pub per_class: BTreeMap<String, Prf>,
    pub macro_scores: MacroScores,
    /// `(scene, message)` for dropped entries or unreadable answers.
    pub warnings: Vec<(String, String)>,
    pub scenes: usize,
}

/// Scores all scenes; scenes run in parallel and counts are reduced in scene
/// order. In strict mode any malformed answer fails the run.
pub fn score_detection(
    scenes: &[DetectionGroundTruth],
    predictions: &HashMap<String, String>,
    classes: &[String],
    iou_threshold: f64,
    mode: ParseMode,
    normalizer: &CategoryNormalizer,
) -> Result<DetectionScores> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold must be in (0, 1], got {iou_threshold}")));
    }
    let per_scene: Vec<Result<(MatchingResult, Vec<String>)>> = scenes
        .par_iter()
        .map(|scene| {
            let mut warnings = Vec::new();
            let preds: Vec<LabeledBox> = match predictions.get(&scene.scene_id) {
                None => {
                    warnings.push("no prediction".to_string());
                    Vec::new()
                }
                Some(text) => match parse_detection_response(text, mode) {
                    Ok(parsed) => {
                        warnings.extend(parsed.warnings.iter().map(ParseError::to_string));
                        parsed.response.items.into_iter().map(LabeledBox::from).collect()
                    }
                    Err(e) if mode == ParseMode::Strict => {
                        return Err(Error::invalid(format!("scene {:?}: {e}", scene.scene_id)))
                    }
                    Err(e) => {
                        warnings.push(format!("unreadable answer: {e}"));
                        Vec::new()
                    }
                },
            };
            Ok((greedy_match(&preds, &scene.boxes, iou_threshold, normalizer), warnings))
        })
        .collect();

    let mut counts: BTreeMap<String, ClassCounts> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (scene, res) in scenes.iter().zip(per_scene) {
        let (m, w) = res?;
        for (k, c) in m.counts {
            *counts.entry(k).or_default() += c;
        }
        warnings.extend(w.into_iter().map(|msg| (scene.scene_id.clone(), msg)));
    }
    let per_class = per_class_prf(&counts);
    let macro_scores = macro_average(&counts, classes);
    Ok(DetectionScores {
        iou_threshold,
        classes: classes.to_vec(),
        counts,
        per_class,
        macro_scores,
        warnings,
        scenes: scenes.len(),
    })
}

impl DetectionScores {
    pub fn to_report(&self) -> Report {
        let pct = (self.iou_threshold * 100.0).round();
        let mut r = Report::new("eval-detect");
        r.metric("scenes", self.scenes);
        r.metric(&format!("AP{pct}"), self.macro_scores.ap);
        r.metric(&format!("AR{pct}"), self.macro_scores.ar);
        r.metric(&format!("F1{pct}"), self.macro_scores.f1);
        r.metric("classes_averaged", self.macro_scores.classes_used.len());
        r.note(format!(
            "averages skip listed classes absent from both GT and predictions ({} of {} used)",
            self.macro_scores.classes_used.len(),
            self.classes.len()
        ));
        for (scene, w) in &self.warnings {
            r.note(format!("scene {scene}: {w}"));
        }

        let mut t = Table::new("per_class", &["class", "tp", "fp", "fn", "precision", "recall", "f1", "listed"]);
        let mut push = |name: &str, listed: bool| {
            let c = self.counts.get(name).copied().unwrap_or_default();
            let prf = Prf::from_counts(&c);
            t.push(vec![
                name.into(),
                c.tp.into(),
                c.fp.into(),
                c.fn_.into(),
                prf.precision.into(),
                prf.recall.into(),
                prf.f1.into(),
                Cell::from(if listed { "yes" } else { "no" }),
            ]);
        };
        for c in &self.classes {
            push(c, true);
        }
        for c in self.counts.keys().filter(|c| !self.classes.contains(c)) {
            push(c, false);
        }
        r.tables.push(t);
        r
    }
}
