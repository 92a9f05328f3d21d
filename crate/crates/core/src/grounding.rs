//! 3D visual grounding accuracy (Acc@IoU).
//!
//! A grounding answer names a frame and a box in that frame's camera
//! coordinates. The box is lifted into world coordinates with the frame's
//! extrinsic and compared against the ground-truth box, which is
//! axis-aligned and carries zero orientation. With proposal refinement the
//! prediction is first snapped to the proposal it overlaps most.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, transform_box, OrientedBox3D};
use crate::pose::Pose;
use crate::protocol::{parse_grounding_response, GroundingResponse};
use crate::records::{box_from_numbers, parse_jsonl, read_text};
use crate::report::{Cell, Report, Table};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.25, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub id: String,
    pub scene_id: String,
    pub query: String,
    /// World-frame GT with zero angles.
    pub gt_box: OrientedBox3D,
    /// `world_from_camera` for every frame shown to the model.
    pub frame_poses: Vec<Pose>,
    /// World-frame proposals; empty when none are available.
    pub proposals: Vec<OrientedBox3D>,
}

/// One line of the ground-truth bundle.
#[derive(Debug, Clone, Deserialize)]
pub struct GroundingSampleRecord {
    pub id: String,
    #[serde(default)]
    pub scene_id: String,
    #[serde(default)]
    pub query: String,
    /// 6 axis-aligned numbers, or 9 with zero angles.
    pub gt_box: Vec<f64>,
    /// Row-major 4×4 `world_from_camera` matrices.
    pub frame_poses: Vec<Vec<f64>>,
    #[serde(default)]
    pub proposals: Vec<Vec<f64>>,
}

impl TryFrom<GroundingSampleRecord> for GroundingSample {
    type Error = Error;

    fn try_from(r: GroundingSampleRecord) -> Result<Self> {
        let what = |field: &str| format!("sample {:?} {field}", r.id);
        let gt_box = box_from_numbers(&r.gt_box, &what("gt_box"))?;
        if gt_box.angles() != crate::Vec3::zeros() {
            return Err(Error::invalid(format!("{}: ground truth must be axis-aligned", what("gt_box"))));
        }
        if r.frame_poses.is_empty() {
            return Err(Error::invalid(format!("{}: no frames", what("frame_poses"))));
        }
        let frame_poses = r
            .frame_poses
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let m: [f64; 16] = m
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::invalid(format!("{}: pose {i} needs 16 numbers", what("frame_poses"))))?;
                Pose::from_row_major(&m).map_err(|e| Error::invalid(format!("{}: pose {i}: {e}", what("frame_poses"))))
            })
            .collect::<Result<Vec<_>>>()?;
        let proposals = r
            .proposals
            .iter()
            .map(|p| box_from_numbers(p, &what("proposal")))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundingSample {
            id: r.id,
            scene_id: r.scene_id,
            query: r.query,
            gt_box,
            frame_poses,
            proposals,
        })
    }
}

pub fn parse_grounding_bundle(text: &str, origin: &str) -> Result<Vec<GroundingSample>> {
    let records: Vec<GroundingSampleRecord> = parse_jsonl(text, origin)?;
    let samples = records.into_iter().map(GroundingSample::try_from).collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for s in &samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Bundle { path: origin.to_string(), message: format!("duplicate sample id {:?}", s.id) });
        }
    }
    Ok(samples)
}

pub fn read_grounding_bundle(path: &Path) -> Result<Vec<GroundingSample>> {
    parse_grounding_bundle(&read_text(path)?, &path.display().to_string())
}

/// Separate proposal file: `{"id": ..., "proposals": [[9 numbers], ...]}` per line.
#[derive(Debug, Clone, Deserialize)]
pub struct ProposalRecord {
    pub id: String,
    pub proposals: Vec<Vec<f64>>,
}

/// Replaces the proposals of every sample named in `records`.
pub fn attach_proposals(samples: &mut [GroundingSample], records: Vec<ProposalRecord>) -> Result<()> {
    let mut by_id: HashMap<String, Vec<OrientedBox3D>> = HashMap::new();
    for r in records {
        let boxes = r
            .proposals
            .iter()
            .map(|p| box_from_numbers(p, &format!("proposals for {:?}", r.id)))
            .collect::<Result<Vec<_>>>()?;
        by_id.insert(r.id, boxes);
    }
    for s in samples.iter_mut() {
        if let Some(p) = by_id.remove(&s.id) {
            s.proposals = p;
        }
    }
    Ok(())
}

/// Why a sample scored as a miss before any IoU was computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Miss {
    NoPrediction,
    Unparseable(String),
    FrameOutOfRange { frame: usize, frames: usize },
}

impl std::fmt::Display for Miss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Miss::NoPrediction => write!(f, "no prediction"),
            Miss::Unparseable(e) => write!(f, "unparseable: {e}"),
            Miss::FrameOutOfRange { frame, frames } => write!(f, "frame {frame} out of range ({frames} frames)"),
        }
    }
}

pub fn lift_prediction_to_world(resp: &GroundingResponse, frame_poses: &[Pose]) -> Result<OrientedBox3D, Miss> {
    let pose = frame_poses.get(resp.frame).ok_or(Miss::FrameOutOfRange {
        frame: resp.frame,
        frames: frame_poses.len(),
    })?;
    Ok(transform_box(&resp.bbox, pose))
}

/// Index and box of the proposal overlapping `pred` most; the lowest index
/// wins ties, including the all-zero case.
pub fn refine_with_proposals(pred: &OrientedBox3D, proposals: &[OrientedBox3D]) -> Result<(usize, OrientedBox3D)> {
    if proposals.is_empty() {
        return Err(Error::invalid("proposal refinement needs at least one proposal"));
    }
    let mut best = (0, iou_3d(pred, &proposals[0]));
    for (i, p) in proposals.iter().enumerate().skip(1) {
        let iou = iou_3d(pred, p);
        if iou > best.1 {
            best = (i, iou);
        }
    }
    Ok((best.0, proposals[best.0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingOutcome {
    pub id: String,
    pub iou: f64,
    /// Present when the sample has proposals.
    pub refined_iou: Option<f64>,
    pub proposal: Option<usize>,
    pub miss: Option<Miss>,
}

pub fn score_sample(sample: &GroundingSample, response: Option<&str>) -> GroundingOutcome {
    let miss = |m: Miss| GroundingOutcome {
        id: sample.id.clone(),
        iou: 0.0,
        refined_iou: (!sample.proposals.is_empty()).then_some(0.0),
        proposal: None,
        miss: Some(m),
    };
    let Some(text) = response else {
        return miss(Miss::NoPrediction);
    };
    let resp = match parse_grounding_response(text) {
        Ok(r) => r,
        Err(e) => return miss(Miss::Unparseable(e.to_string())),
    };
    let world = match lift_prediction_to_world(&resp, &sample.frame_poses) {
        Ok(b) => b,
        Err(m) => return miss(m),
    };
    let iou = iou_3d(&world, &sample.gt_box);
    let (proposal, refined_iou) = match refine_with_proposals(&world, &sample.proposals) {
        Ok((idx, b)) => (Some(idx), Some(iou_3d(&b, &sample.gt_box))),
        Err(_) => (None, None),
    };
    GroundingOutcome { id: sample.id.clone(), iou, refined_iou, proposal, miss: None }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingScores {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// Present when any sample has proposals; samples without proposals
    /// contribute their unrefined IoU.
    pub refined_accuracy: Option<Vec<f64>>,
    pub outcomes: Vec<GroundingOutcome>,
    /// Prediction ids that match no sample.
    pub unknown_predictions: Vec<String>,
}

fn accuracy(ious: &[f64], t: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64
}

/// Scores every sample against its prediction. Samples are processed in
/// parallel on the current rayon pool; outcomes keep sample order.
pub fn score_grounding(
    samples: &[GroundingSample],
    predictions: &HashMap<String, String>,
    thresholds: &[f64],
) -> GroundingScores {
    let outcomes: Vec<GroundingOutcome> = samples
        .par_iter()
        .map(|s| score_sample(s, predictions.get(&s.id).map(String::as_str)))
        .collect();
    let ious: Vec<f64> = outcomes.iter().map(|o| o.iou).collect();
    let any_proposals = outcomes.iter().any(|o| o.refined_iou.is_some());
    let refined: Vec<f64> = outcomes.iter().map(|o| o.refined_iou.unwrap_or(o.iou)).collect();

    let known: std::collections::HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let mut unknown_predictions: Vec<String> =
        predictions.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
    unknown_predictions.sort();

    GroundingScores {
        thresholds: thresholds.to_vec(),
        accuracy: thresholds.iter().map(|&t| accuracy(&ious, t)).collect(),
        refined_accuracy: any_proposals.then(|| thresholds.iter().map(|&t| accuracy(&refined, t)).collect()),
        outcomes,
        unknown_predictions,
    }
}

impl GroundingScores {
    /// Headline `acc@t` uses refined boxes when `refine` is set and proposals
    /// exist; both variants are always listed.
    pub fn to_report(&self, refine: bool) -> Report {
        let mut r = Report::new("eval-grounding");
        r.metric("samples", self.outcomes.len());
        let headline = match (&self.refined_accuracy, refine) {
            (Some(acc), true) => acc,
            _ => &self.accuracy,
        };
        for (t, acc) in self.thresholds.iter().zip(headline) {
            r.metric(&format!("acc@{t}"), *acc);
        }
        for (t, acc) in self.thresholds.iter().zip(&self.accuracy) {
            r.metric(&format!("acc@{t}.unrefined"), *acc);
        }
        if let Some(refined) = &self.refined_accuracy {
            for (t, acc) in self.thresholds.iter().zip(refined) {
                r.metric(&format!("acc@{t}.refined"), *acc);
            }
        } else if refine {
            r.note("refinement requested but no sample has proposals; headline is unrefined");
        }
        let misses = self.outcomes.iter().filter(|o| o.miss.is_some()).count();
        r.metric("misses", misses);
        if !self.unknown_predictions.is_empty() {
            r.note(format!("{} prediction(s) match no sample and were ignored", self.unknown_predictions.len()));
        }

        let mut t = Table::new("per_sample", &["id", "iou", "refined_iou", "proposal", "status"]);
        for o in &self.outcomes {
            t.push(vec![
                o.id.clone().into(),
                o.iou.into(),
                o.refined_iou.map_or(Cell::NotAvailable, Cell::Num),
                o.proposal.map_or(Cell::NotAvailable, Cell::from),
                o.miss.as_ref().map_or_else(|| "ok".to_string(), |m| m.to_string()).into(),
            ]);
        }
        r.tables.push(t);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::render_grounding_answer;
    use crate::Vec3;

    fn cube(x: f64) -> OrientedBox3D {
        OrientedBox3D::axis_aligned(Vec3::new(x, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn sample(id: &str, poses: Vec<Pose>, proposals: Vec<OrientedBox3D>) -> GroundingSample {
        GroundingSample {
            id: id.to_string(),
            scene_id: "scene".into(),
            query: "q".into(),
            gt_box: cube(0.0),
            frame_poses: poses,
            proposals,
        }
    }

    #[test]
    fn lift_identity_and_translation() {
        let b = OrientedBox3D::from_array([0.1, 0.2, 0.3, 1.0, 1.0, 1.0, 0.5, 0.0, 0.0]).unwrap();
        let poses = [Pose::identity(), Pose::from_translation(Vec3::new(1.0, 2.0, 3.0))];
        let same = lift_prediction_to_world(&GroundingResponse { frame: 0, bbox: b }, &poses).unwrap();
        assert!((same.center() - b.center()).amax() < 1e-15);
        let moved = lift_prediction_to_world(&GroundingResponse { frame: 1, bbox: b }, &poses).unwrap();
        assert!((moved.center() - b.center() - Vec3::new(1.0, 2.0, 3.0)).amax() < 1e-15);
        assert_eq!(
            lift_prediction_to_world(&GroundingResponse { frame: 2, bbox: b }, &poses),
            Err(Miss::FrameOutOfRange { frame: 2, frames: 2 })
        );
    }

    #[test]
    fn refinement_selection() {
        let pred = cube(0.0);
        assert_eq!(refine_with_proposals(&pred, &[cube(0.4), pred, cube(0.1)]).unwrap().0, 1);
        assert_eq!(refine_with_proposals(&pred, &[cube(5.0), cube(-5.0)]).unwrap().0, 0);
        assert!(refine_with_proposals(&pred, &[]).is_err());

        // Unit cubes offset by d along x overlap with IoU (1 − d)/(1 + d):
        // d = 9/11 → 0.1, d = 1/4 → 0.6, d = 7/13 → 0.3.
        let props = [cube(9.0 / 11.0), cube(0.25), cube(7.0 / 13.0)];
        let ious: Vec<f64> = props.iter().map(|p| iou_3d(&pred, p)).collect();
        for (got, want) in ious.iter().zip([0.1, 0.6, 0.3]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(refine_with_proposals(&pred, &props).unwrap().0, 1);
    }

    #[test]
    fn exact_prediction_hits_both_thresholds() {
        let s = sample("a", vec![Pose::identity()], vec![]);
        let mut preds = HashMap::new();
        preds.insert("a".to_string(), render_grounding_answer(0, &cube(0.0)));
        let scores = score_grounding(&[s], &preds, &DEFAULT_THRESHOLDS);
        assert_eq!(scores.accuracy, vec![1.0, 1.0]);
        assert!(scores.refined_accuracy.is_none());
    }

    #[test]
    fn empty_responses_are_misses() {
        let samples: Vec<_> = (0..3).map(|i| sample(&format!("s{i}"), vec![Pose::identity()], vec![cube(0.0)])).collect();
        let preds: HashMap<String, String> = samples.iter().map(|s| (s.id.clone(), String::new())).collect();
        let scores = score_grounding(&samples, &preds, &DEFAULT_THRESHOLDS);
        assert_eq!(scores.accuracy, vec![0.0, 0.0]);
        assert_eq!(scores.refined_accuracy, Some(vec![0.0, 0.0]));
        assert!(scores.outcomes.iter().all(|o| matches!(o.miss, Some(Miss::Unparseable(_)))));
    }

    #[test]
    fn out_of_range_frame_is_a_miss_not_a_clamp() {
        let s = sample("a", vec![Pose::identity()], vec![]);
        let mut preds = HashMap::new();
        preds.insert("a".to_string(), render_grounding_answer(3, &cube(0.0)));
        let scores = score_grounding(&[s], &preds, &DEFAULT_THRESHOLDS);
        assert_eq!(scores.accuracy, vec![0.0, 0.0]);
        assert_eq!(scores.outcomes[0].miss, Some(Miss::FrameOutOfRange { frame: 3, frames: 1 }));
    }

    #[test]
    fn refinement_can_rescue_a_sloppy_box() {
        let s = sample("a", vec![Pose::identity()], vec![cube(3.0), cube(0.0)]);
        let mut preds = HashMap::new();
        preds.insert("a".to_string(), render_grounding_answer(0, &cube(0.45)));
        let scores = score_grounding(&[s], &preds, &DEFAULT_THRESHOLDS);
        assert_eq!(scores.accuracy, vec![1.0, 0.0]);
        assert_eq!(scores.refined_accuracy, Some(vec![1.0, 1.0]));
        let report = scores.to_report(true);
        assert_eq!(report.metric_value("acc@0.5"), Some(&Cell::Num(1.0)));
        assert_eq!(report.metric_value("acc@0.5.unrefined"), Some(&Cell::Num(0.0)));
    }

    #[test]
    fn bundle_parsing() {
        let line = r#"{"id": "s0", "scene_id": "scene0000_00", "query": "a chair", "gt_box": [0, 0, 0, 1, 1, 1], "frame_poses": [[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]], "proposals": [[0,0,0,1,1,1,0,0,0]]}"#;
        let samples = parse_grounding_bundle(line, "mem").unwrap();
        assert_eq!(samples[0].gt_box, cube(0.0));
        assert_eq!(samples[0].proposals.len(), 1);

        let rotated = line.replace("[0, 0, 0, 1, 1, 1]", "[0, 0, 0, 1, 1, 1, 0.3, 0, 0]");
        assert!(parse_grounding_bundle(&rotated, "mem").is_err());
        let no_frames = line.replace("[[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]]", "[]");
        assert!(parse_grounding_bundle(&no_frames, "mem").is_err());
        assert!(parse_grounding_bundle(&format!("{line}\n{line}"), "mem").is_err());
    }
}
