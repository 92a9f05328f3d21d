//! Frame sampling, best-frame selection and annotation rebasing.
//!
//! Cameras follow the pinhole convention with `+z` forward, `+x` right and
//! `+y` down; pixel `(u, v)` is `(fx·x/z + cx, fy·y/z + cy)` and the image
//! occupies `[0, width] × [0, height]`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull_2d, iou_3d, polygon_area, transform_box, OrientedBox3D};
use crate::pose::Pose;
use crate::records::read_text;

/// Corners closer to the image plane than this are dropped before hulling.
pub const NEAR_EPS: f64 = 1e-6;
pub const DEFAULT_TARGET_FPS: f64 = 2.0;
pub const DEFAULT_MIN_K: usize = 4;
pub const DEFAULT_MAX_K: usize = 8;
pub const DEFAULT_MATCH_IOU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        if [fx, fy, cx, cy, width, height].iter().any(|v| !v.is_finite()) || fx <= 0.0 || fy <= 0.0 || width <= 0.0 || height <= 0.0 {
            return Err(Error::invalid(format!("invalid intrinsics {k:?}")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// `world_from_camera`.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Timestamped cameras of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    timestamps: Vec<f64>,
    cameras: Vec<Camera>,
}

impl FrameStream {
    pub fn new(timestamps: Vec<f64>, cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("frame stream has no frames"));
        }
        if timestamps.len() != cameras.len() {
            return Err(Error::invalid(format!("{} timestamps for {} frames", timestamps.len(), cameras.len())));
        }
        if timestamps.iter().any(|t| !t.is_finite()) || timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be finite and strictly increasing"));
        }
        Ok(FrameStream { timestamps, cameras })
    }

    /// Frames spaced `1 / fps` seconds apart starting at zero.
    pub fn uniformly_spaced(cameras: Vec<Camera>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("frame rate must be positive, got {fps}")));
        }
        let timestamps = (0..cameras.len()).map(|i| i as f64 / fps).collect();
        Self::new(timestamps, cameras)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn camera(&self, frame: usize) -> Option<&Camera> {
        self.cameras.get(frame)
    }

    /// Index of the frame closest in time to `t`; ties go to the earlier one.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let ts = &self.timestamps;
        let after = ts.partition_point(|&x| x < t);
        if after == 0 {
            return 0;
        }
        if after == ts.len() {
            return ts.len() - 1;
        }
        if t - ts[after - 1] <= ts[after] - t {
            after - 1
        } else {
            after
        }
    }
}

/// `K` evenly spread indices out of `N`: `round(j·(N−1)/(K−1))`, always
/// starting at 0 and ending at `N − 1`.
pub fn uniform_sample(n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot sample {k} of {n} frames")));
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    let mut idx: Vec<usize> = (0..k)
        .map(|j| ((j * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect();
    // Rounding cannot collide while k ≤ n, but keep the output strictly
    // increasing regardless: shift forward, then pull back from the end.
    for j in 1..k {
        if idx[j] <= idx[j - 1] {
            idx[j] = idx[j - 1] + 1;
        }
    }
    idx[k - 1] = idx[k - 1].min(n - 1);
    for j in (0..k - 1).rev() {
        if idx[j] >= idx[j + 1] {
            idx[j] = idx[j + 1] - 1;
        }
    }
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsPolicy {
    pub target_fps: f64,
    pub min_k: usize,
    pub max_k: usize,
}

impl Default for FpsPolicy {
    fn default() -> Self {
        FpsPolicy { target_fps: DEFAULT_TARGET_FPS, min_k: DEFAULT_MIN_K, max_k: DEFAULT_MAX_K }
    }
}

impl FpsPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fps.is_finite() && self.target_fps > 0.0) {
            return Err(Error::invalid(format!("target fps must be positive, got {}", self.target_fps)));
        }
        if self.min_k == 0 || self.min_k > self.max_k {
            return Err(Error::invalid(format!("need 1 ≤ min_k ≤ max_k, got {} and {}", self.min_k, self.max_k)));
        }
        Ok(())
    }
}

/// Frames at `target_fps` (nearest frame to each tick, ticks from the first
/// timestamp up to the last), then clamped into `[min(min_k, N), max_k]`.
pub fn fps_adaptive_sample(stream: &FrameStream, policy: &FpsPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    let ts = stream.timestamps();
    let (start, end) = (ts[0], ts[ts.len() - 1]);
    let period = 1.0 / policy.target_fps;
    let mut picks: Vec<usize> = Vec::new();
    for tick in 0.. {
        // Multiply rather than accumulate so long streams do not drift.
        let t = start + tick as f64 * period;
        if t > end + 1e-9 {
            break;
        }
        let f = stream.nearest_frame(t);
        if picks.last() != Some(&f) {
            picks.push(f);
        }
    }
    if picks.len() < policy.min_k {
        return uniform_sample(stream.len(), policy.min_k.min(stream.len()));
    }
    if picks.len() > policy.max_k {
        return Ok(uniform_sample(picks.len(), policy.max_k)?.into_iter().map(|i| picks[i]).collect());
    }
    Ok(picks)
}

/// Clips a polygon against the half-plane `a·p ≤ b`.
fn clip_half_plane(poly: &[Vector2<f64>], a: Vector2<f64>, b: f64) -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let (dp, dq) = (a.dot(&p) - b, a.dot(&q) - b);
        if dp <= 0.0 {
            out.push(p);
        }
        if (dp < 0.0 && dq > 0.0) || (dp > 0.0 && dq < 0.0) {
            out.push(p + (q - p) * (dp / (dp - dq)));
        }
    }
    out
}

/// Clips `poly` to the rectangle `[0, w] × [0, h]` and returns the area.
pub fn clipped_area(poly: &[Vector2<f64>], width: f64, height: f64) -> f64 {
    let mut p = poly.to_vec();
    for (a, b) in [
        (Vector2::new(-1.0, 0.0), 0.0),
        (Vector2::new(1.0, 0.0), width),
        (Vector2::new(0.0, -1.0), 0.0),
        (Vector2::new(0.0, 1.0), height),
    ] {
        p = clip_half_plane(&p, a, b);
        if p.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&p).abs()
}

/// Pixel area of the box's projected outline inside the image. Corners at or
/// behind the near threshold are dropped rather than clipped; the result is
/// a ranking heuristic, not a rendering.
pub fn project_box_area(box_world: &OrientedBox3D, camera: &Camera) -> f64 {
    let camera_from_world = camera.pose.invert();
    let k = &camera.intrinsics;
    let pixels: Vec<Vector2<f64>> = box_world
        .corners()
        .iter()
        .map(|c| camera_from_world.apply(c))
        .filter(|p| p.z > NEAR_EPS)
        .map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
        .collect();
    if pixels.len() < 3 {
        return 0.0;
    }
    let hull: Vec<Vector2<f64>> = convex_hull_2d(&pixels).into_iter().map(|i| pixels[i]).collect();
    if hull.len() < 3 {
        return 0.0;
    }
    let area = clipped_area(&hull, k.width, k.height);
    if area.is_finite() {
        area
    } else {
        0.0
    }
}

/// One instance's box as annotated in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleAnnotation {
    pub frame: usize,
    pub instance_id: u64,
    pub bbox: OrientedBox3D,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestFrame {
    pub frame: usize,
    pub instance_id: u64,
    pub iou: f64,
    pub area: f64,
}

/// Matches the target to the annotated instance of highest IoU (ties: lowest
/// id), then returns the frame where that instance projects largest (ties:
/// lowest frame). The result does not depend on annotation order.
pub fn select_best_frame(
    target_world: &OrientedBox3D,
    annotations: &[VisibleAnnotation],
    stream: &FrameStream,
    match_iou_min: f64,
) -> Result<BestFrame> {
    if annotations.is_empty() {
        return Err(Error::invalid("no annotations to match against"));
    }
    if let Some(a) = annotations.iter().find(|a| a.frame >= stream.len()) {
        return Err(Error::invalid(format!(
            "annotation of instance {} refers to frame {} of a {}-frame stream",
            a.instance_id,
            a.frame,
            stream.len()
        )));
    }
    let mut by_instance: BTreeMap<u64, Vec<&VisibleAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_instance.entry(a.instance_id).or_default().push(a);
    }
    let mut best: Option<(u64, f64)> = None;
    for (&id, anns) in &by_instance {
        let iou = anns.iter().map(|a| iou_3d(target_world, &a.bbox)).fold(0.0, f64::max);
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((id, iou));
        }
    }
    let (instance_id, iou) = best.expect("annotations are non-empty");
    if iou < match_iou_min {
        return Err(Error::NoMatch { min_iou: match_iou_min, best_iou: iou });
    }
    let mut pick: Option<(usize, f64)> = None;
    for a in &by_instance[&instance_id] {
        let area = project_box_area(&a.bbox, &stream.cameras[a.frame]);
        let better = match pick {
            None => true,
            Some((f, best_area)) => area > best_area || (area == best_area && a.frame < f),
        };
        if better {
            pick = Some((a.frame, area));
        }
    }
    let (frame, area) = pick.expect("instance has annotations");
    Ok(BestFrame { frame, instance_id, iou, area })
}

/// Re-expresses world-frame boxes in the first camera's frame.
pub fn rebase_annotations(boxes: &[OrientedBox3D], first_frame_pose: &Pose) -> Vec<OrientedBox3D> {
    let first_from_world = first_frame_pose.invert();
    boxes.iter().map(|b| transform_box(b, &first_from_world)).collect()
}

/// A scene directory: `frames.txt`, `poses.txt`, `intrinsics.txt` and,
/// optionally, `annotations.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub frame_paths: Vec<String>,
    pub stream: FrameStream,
    pub annotations: Vec<VisibleAnnotation>,
}

/// Frame rate assumed when `frames.txt` carries no timestamps.
pub const IMPLICIT_FPS: f64 = 30.0;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn bundle_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Bundle { path: format!("{}:{line}", path.display()), message: message.into() }
}

fn numbers(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|w| {
            w.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bundle_err(path, line, format!("not a finite number: {w:?}")))
        })
        .collect()
}

impl SceneBundle {
    pub fn read(dir: &Path) -> Result<Self> {
        let frames_path = dir.join("frames.txt");
        let mut frame_paths = Vec::new();
        let mut stamps = Vec::new();
        for (ln, line) in content_lines(&read_text(&frames_path)?) {
            let mut parts = line.split_whitespace();
            frame_paths.push(parts.next().expect("non-empty line").to_string());
            match (parts.next(), parts.next()) {
                (None, _) => stamps.push(None),
                (Some(t), None) => stamps.push(Some(
                    t.parse::<f64>().map_err(|_| bundle_err(&frames_path, ln, format!("bad timestamp {t:?}")))?,
                )),
                _ => return Err(bundle_err(&frames_path, ln, "expected `path [timestamp]`")),
            }
        }
        let timestamps: Option<Vec<f64>> = match stamps.iter().filter(|s| s.is_some()).count() {
            0 => None,
            n if n == stamps.len() => Some(stamps.into_iter().flatten().collect()),
            _ => return Err(Error::Bundle { path: frames_path.display().to_string(), message: "timestamps must be given for all frames or none".into() }),
        };

        let poses_path = dir.join("poses.txt");
        let mut poses = Vec::new();
        for (ln, line) in content_lines(&read_text(&poses_path)?) {
            let v = numbers(&poses_path, ln, line)?;
            let m: [f64; 16] = v
                .try_into()
                .map_err(|v: Vec<f64>| bundle_err(&poses_path, ln, format!("expected 16 numbers, found {}", v.len())))?;
            poses.push(Pose::from_row_major(&m).map_err(|e| bundle_err(&poses_path, ln, e.to_string()))?);
        }
        if poses.len() != frame_paths.len() {
            return Err(Error::Bundle {
                path: poses_path.display().to_string(),
                message: format!("{} poses for {} frames", poses.len(), frame_paths.len()),
            });
        }

        let intr_path = dir.join("intrinsics.txt");
        let mut intrinsics = Vec::new();
        for (ln, line) in content_lines(&read_text(&intr_path)?) {
            let v = numbers(&intr_path, ln, line)?;
            if v.len() != 6 {
                return Err(bundle_err(&intr_path, ln, format!("expected `fx fy cx cy width height`, found {} numbers", v.len())));
            }
            intrinsics.push(Intrinsics::new(v[0], v[1], v[2], v[3], v[4], v[5]).map_err(|e| bundle_err(&intr_path, ln, e.to_string()))?);
        }
        let intrinsics = match intrinsics.len() {
            1 => vec![intrinsics[0]; poses.len()],
            n if n == poses.len() => intrinsics,
            n => {
                return Err(Error::Bundle {
                    path: intr_path.display().to_string(),
                    message: format!("expected 1 or {} intrinsics lines, found {n}", poses.len()),
                })
            }
        };
        let cameras: Vec<Camera> = poses.into_iter().zip(intrinsics).map(|(pose, intrinsics)| Camera { pose, intrinsics }).collect();
        let stream = match timestamps {
            Some(ts) => FrameStream::new(ts, cameras),
            None => FrameStream::uniformly_spaced(cameras, IMPLICIT_FPS),
        }
        .map_err(|e| Error::Bundle { path: frames_path.display().to_string(), message: e.to_string() })?;

        let ann_path = dir.join("annotations.txt");
        let annotations = if ann_path.exists() {
            parse_annotations(&read_text(&ann_path)?, &ann_path, stream.len())?
        } else {
            Vec::new()
        };
        Ok(SceneBundle { frame_paths, stream, annotations })
    }
}

/// `instance_id | category | 9 box numbers | visible frame indices`, one
/// instance per line; expands to one annotation per visible frame.
fn parse_annotations(text: &str, path: &Path, frames: usize) -> Result<Vec<VisibleAnnotation>> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(text) {
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bundle_err(path, ln, "expected `id | category | 9 numbers | frames`"));
        }
        let instance_id: u64 = fields[0].parse().map_err(|_| bundle_err(path, ln, format!("bad instance id {:?}", fields[0])))?;
        if fields[1].is_empty() {
            return Err(bundle_err(path, ln, "empty category"));
        }
        let v = numbers(path, ln, fields[2])?;
        let arr: [f64; 9] = v
            .try_into()
            .map_err(|v: Vec<f64>| bundle_err(path, ln, format!("box needs 9 numbers, found {}", v.len())))?;
        let bbox = OrientedBox3D::from_array(arr).map_err(|e| bundle_err(path, ln, e.to_string()))?;
        for w in fields[3].split_whitespace() {
            let frame: usize = w.parse().map_err(|_| bundle_err(path, ln, format!("bad frame index {w:?}")))?;
            if frame >= frames {
                return Err(bundle_err(path, ln, format!("frame {frame} out of range for {frames} frames")));
            }
            out.push(VisibleAnnotation { frame, instance_id, bbox, category: fields[1].to_string() });
        }
    }
    Ok(out)
}
