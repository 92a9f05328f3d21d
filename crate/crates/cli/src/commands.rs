//! One function per subcommand; each returns a finished report.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use vgscene_core::caption::{apply_predictions, iou_gated_scores, read_caption_samples, DEFAULT_GATE};
use vgscene_core::dataprep::{
    fps_adaptive_sample, rebase_annotations, select_best_frame, uniform_sample, FpsPolicy, SceneBundle, DEFAULT_MATCH_IOU,
    DEFAULT_MAX_K, DEFAULT_MIN_K, DEFAULT_TARGET_FPS,
};
use vgscene_core::detection::{read_detection_bundle, score_detection, CategoryNormalizer, DEFAULT_IOU_THRESHOLD};
use vgscene_core::fusion::{fuse, merge_2x2, merged_shape, mlp_gradient_check, Activation, Grid, MergedGrid, PatchGrid, Provenance, TwoLayerMlp};
use vgscene_core::grounding::{attach_proposals, read_grounding_bundle, score_grounding, ProposalRecord, DEFAULT_THRESHOLDS};
use vgscene_core::protocol::{build_prompt, render_box, ParseMode, PromptOptions, PromptTask};
use vgscene_core::records::{read_jsonl, read_predictions, read_text};
use vgscene_core::report::{Cell, Table};
use vgscene_core::{iou_3d, Error, OrientedBox3D, Report};

use crate::config::{check_threshold, require_file, FileConfig};
use crate::{CaptionArgs, DetectArgs, FuseArgs, GroundingArgs, Policy, PrepArgs, PromptArgs, PromptKind};

fn show(p: &std::path::Path) -> String {
    p.display().to_string()
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

pub fn eval_grounding(a: GroundingArgs, file: &FileConfig) -> Result<Report> {
    let pred = require_file("pred", a.pred.or_else(|| file.pred.clone()))?;
    let gt = require_file("gt", a.gt.or_else(|| file.gt.clone()))?;
    let proposals = a.proposals.or_else(|| file.proposals.clone());
    let thresholds = a
        .iou_thresh
        .or_else(|| file.iou_thresh.clone().map(|t| t.into_vec()))
        .unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    if thresholds.is_empty() {
        bail!("at least one IoU threshold is required");
    }
    for &t in &thresholds {
        check_threshold("--iou-thresh", t)?;
    }
    let refine = !a.no_refine && file.refine.unwrap_or(true);

    let mut samples = read_grounding_bundle(&gt)?;
    if let Some(p) = &proposals {
        let p = require_file("proposals", Some(p.clone()))?;
        attach_proposals(&mut samples, read_jsonl::<ProposalRecord>(&p)?)?;
    }
    let predictions = read_predictions(&pred)?;
    let scores = score_grounding(&samples, &predictions, &thresholds);
    for o in scores.outcomes.iter().filter(|o| o.miss.is_some()) {
        log::debug!("sample {}: {}", o.id, o.miss.as_ref().expect("filtered"));
    }

    let mut report = scores.to_report(refine);
    let mut header = Report::new("eval-grounding");
    header
        .config("pred", show(&pred))
        .config("gt", show(&gt))
        .config("proposals", proposals.as_deref().map_or_else(|| "none".into(), show))
        .config("iou_thresh", join_f64(&thresholds))
        .config("refine", refine);
    report.config = header.config;
    Ok(report)
}

fn read_aliases(path: &std::path::Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON object of alias → class", path.display()))
}

pub fn eval_detect(a: DetectArgs, file: &FileConfig) -> Result<Report> {
    let pred = require_file("pred", a.pred.or_else(|| file.pred.clone()))?;
    let gt = require_file("gt", a.gt.or_else(|| file.gt.clone()))?;
    let threshold = match (a.iou_thresh, &file.iou_thresh) {
        (Some(t), _) => t,
        (None, Some(t)) => match t.clone().into_vec().as_slice() {
            [t] => *t,
            _ => bail!("detection takes a single IoU threshold"),
        },
        (None, None) => DEFAULT_IOU_THRESHOLD,
    };
    check_threshold("--iou-thresh", threshold)?;
    let strict = if a.strict {
        true
    } else if a.lenient {
        false
    } else {
        file.strict.unwrap_or(false)
    };
    let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
    let alias_path = a.aliases.or_else(|| file.aliases.clone());

    let bundle = read_detection_bundle(&gt)?;
    let mut aliases = bundle.aliases.clone();
    if let Some(p) = &alias_path {
        aliases.extend(read_aliases(p)?);
    }
    let normalizer = CategoryNormalizer::new(aliases.iter());
    let predictions = read_predictions(&pred)?;
    let scores = score_detection(&bundle.scenes, &predictions, &bundle.classes, threshold, mode, &normalizer)?;
    for (scene, w) in &scores.warnings {
        log::warn!("scene {scene}: {w}");
    }

    let mut report = scores.to_report();
    let mut header = Report::new("eval-detect");
    header
        .config("pred", show(&pred))
        .config("gt", show(&gt))
        .config("iou_thresh", threshold)
        .config("mode", if strict { "strict" } else { "lenient" })
        .config("aliases", alias_path.as_deref().map_or_else(|| "none".into(), show));
    report.config = header.config;
    Ok(report)
}

pub fn eval_caption(a: CaptionArgs, file: &FileConfig) -> Result<Report> {
    let gt = require_file("gt", a.gt.or_else(|| file.gt.clone()))?;
    let pred = a.pred.or_else(|| file.pred.clone());
    let gate = a.gate.or(file.gate).unwrap_or(DEFAULT_GATE);
    check_threshold("--gate", gate)?;

    let mut samples = read_caption_samples(&gt)?;
    if let Some(p) = &pred {
        let p = require_file("pred", Some(p.clone()))?;
        apply_predictions(&mut samples, &read_predictions(&p)?);
    }
    let mut report = iou_gated_scores(&samples, gate).to_report();
    let mut header = Report::new("eval-caption");
    header
        .config("gt", show(&gt))
        .config("pred", pred.as_deref().map_or_else(|| "none".into(), show))
        .config("gate", gate);
    report.config = header.config;
    Ok(report)
}

/// Frame, projected area and IoU of the best frame, or why there is none.
type BestOutcome = Result<(usize, f64, f64), String>;

struct SceneResult {
    name: String,
    frames: usize,
    sampled: Vec<usize>,
    best: Vec<(u64, String, BestOutcome)>,
    rebased: Vec<(u64, String, OrientedBox3D)>,
}

fn prep_scene(dir: &std::path::Path, policy: Policy, uniform_k: usize, fps: &FpsPolicy, match_iou: f64) -> Result<SceneResult> {
    let bundle = SceneBundle::read(dir)?;
    let n = bundle.stream.len();
    let sampled = match policy {
        Policy::Uniform => uniform_sample(n, uniform_k.min(n))?,
        Policy::Fps => fps_adaptive_sample(&bundle.stream, fps)?,
    };

    // Every annotated instance is a target; its first annotation supplies the box.
    let mut instances: BTreeMap<u64, (String, OrientedBox3D)> = BTreeMap::new();
    for a in &bundle.annotations {
        instances.entry(a.instance_id).or_insert_with(|| (a.category.clone(), a.bbox));
    }
    let targets: Vec<(u64, String, OrientedBox3D)> = instances.into_iter().map(|(id, (c, b))| (id, c, b)).collect();
    let best = targets
        .par_iter()
        .map(|(id, cat, b)| {
            let r = match select_best_frame(b, &bundle.annotations, &bundle.stream, match_iou) {
                Ok(best) => Ok((best.frame, best.area, best.iou)),
                Err(e @ Error::NoMatch { .. }) => {
                    log::warn!("{}: instance {id}: {e}; skipped", dir.display());
                    Err(e.to_string())
                }
                Err(e) => return Err(anyhow::Error::from(e)),
            };
            Ok((*id, cat.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = bundle.stream.cameras()[sampled[0]].pose;
    let boxes: Vec<OrientedBox3D> = targets.iter().map(|t| t.2).collect();
    let rebased = targets
        .iter()
        .zip(rebase_annotations(&boxes, &first))
        .map(|((id, cat, _), b)| (*id, cat.clone(), b))
        .collect();
    Ok(SceneResult { name: show(dir), frames: n, sampled, best, rebased })
}

pub fn prep_frames(a: PrepArgs, file: &FileConfig) -> Result<Report> {
    let scenes: Vec<PathBuf> = if a.scenes.is_empty() { file.scenes.clone().unwrap_or_default() } else { a.scenes };
    if scenes.is_empty() {
        bail!("at least one --scene directory is required");
    }
    for s in &scenes {
        if !s.is_dir() {
            bail!("--scene: {} is not a directory", s.display());
        }
    }
    let policy = match (a.policy, file.policy.as_deref()) {
        (Some(p), _) => p,
        (None, Some("uniform")) => Policy::Uniform,
        (None, Some("fps")) | (None, None) => Policy::Fps,
        (None, Some(other)) => bail!("unknown policy {other:?}; expected \"uniform\" or \"fps\""),
    };
    let uniform_k = a.frames.or(file.frames).unwrap_or(24);
    if uniform_k == 0 {
        bail!("--frames must be at least 1");
    }
    let fps = FpsPolicy {
        target_fps: a.target_fps.or(file.target_fps).unwrap_or(DEFAULT_TARGET_FPS),
        min_k: a.min_k.or(file.min_k).unwrap_or(DEFAULT_MIN_K),
        max_k: a.max_k.or(file.max_k).unwrap_or(DEFAULT_MAX_K),
    };
    fps.validate()?;
    let match_iou = a.match_iou.or(file.match_iou).unwrap_or(DEFAULT_MATCH_IOU);
    check_threshold("--match-iou", match_iou)?;

    let results = scenes
        .par_iter()
        .map(|s| prep_scene(s, policy, uniform_k, &fps, match_iou).with_context(|| format!("scene {}", s.display())))
        .collect::<Result<Vec<_>>>()?;

    let mut r = Report::new("prep-frames");
    r.config("scenes", scenes.iter().map(|s| show(s)).collect::<Vec<_>>().join(","));
    match policy {
        Policy::Uniform => {
            r.config("policy", "uniform").config("frames", uniform_k);
        }
        Policy::Fps => {
            r.config("policy", "fps")
                .config("target_fps", fps.target_fps)
                .config("min_k", fps.min_k)
                .config("max_k", fps.max_k);
        }
    }
    r.config("match_iou", match_iou);

    let targets: usize = results.iter().map(|s| s.best.len()).sum();
    let matched: usize = results.iter().map(|s| s.best.iter().filter(|b| b.2.is_ok()).count()).sum();
    r.metric("scenes", results.len());
    r.metric("frames", results.iter().map(|s| s.frames).sum::<usize>());
    r.metric("sampled_frames", results.iter().map(|s| s.sampled.len()).sum::<usize>());
    r.metric("targets", targets);
    r.metric("best_frames", matched);
    r.metric("no_match", targets - matched);
    r.note("boxes are rebased into the camera frame of the first sampled frame");

    let mut sampled = Table::new("sampled", &["scene", "frames", "indices"]);
    let mut best = Table::new("best_frames", &["scene", "instance", "category", "frame", "area_px", "iou", "status"]);
    let mut rebased = Table::new("rebased", &["scene", "instance", "category", "box"]);
    for s in &results {
        let idx: Vec<String> = s.sampled.iter().map(|i| i.to_string()).collect();
        sampled.push(vec![s.name.clone().into(), s.frames.into(), idx.join(" ").into()]);
        for (id, cat, res) in &s.best {
            let row = match res {
                Ok((frame, area, iou)) => vec![(*frame).into(), Cell::Num(*area), Cell::Num(*iou), "ok".into()],
                Err(msg) => vec![Cell::NotAvailable, Cell::NotAvailable, Cell::NotAvailable, msg.clone().into()],
            };
            let mut full = vec![s.name.clone().into(), Cell::Int(*id as i64), cat.clone().into()];
            full.extend(row);
            best.push(full);
        }
        for (id, cat, b) in &s.rebased {
            rebased.push(vec![s.name.clone().into(), Cell::Int(*id as i64), cat.clone().into(), render_box(b).into()]);
        }
    }
    r.tables.extend([sampled, best, rebased]);
    Ok(r)
}

pub fn fuse_demo(a: FuseArgs, file: &FileConfig, seed: u64) -> Result<Report> {
    let height = a.height.or(file.height).unwrap_or(448);
    let width = a.width.or(file.width).unwrap_or(448);
    let patch = a.patch.or(file.patch).unwrap_or(14);
    let channels = a.channels.or(file.channels).unwrap_or(8);
    let hidden = a.hidden.or(file.hidden).unwrap_or(16);
    let configs = a.configs.or(file.configs).unwrap_or(50);

    let (mh, mw) = merged_shape(height, width, patch)?;
    let visual = PatchGrid::for_image(height, width, patch, channels, Provenance::Visual)?;
    let (rows, cols, _) = visual.grid.shape();
    let visual = PatchGrid::new(Grid::random(rows, cols, channels, seed)?, Provenance::Visual);
    let geometry = PatchGrid::new(Grid::random(rows, cols, channels, seed.wrapping_add(1))?, Provenance::Geometry);
    let visual_mlp = TwoLayerMlp::seeded(channels, hidden, seed.wrapping_add(2), Activation::Gelu)?;
    let geometry_mlp = TwoLayerMlp::seeded(channels, hidden, seed.wrapping_add(3), Activation::Gelu)?;

    let v = merge_2x2(&visual, &visual_mlp)?;
    let g = merge_2x2(&geometry, &geometry_mlp)?;
    let fused = fuse(&g, &v)?;
    let zero = MergedGrid { grid: Grid::zeros(mh, mw, channels)?, provenance: Provenance::GeometryMerged };
    let identity_err = fuse(&zero, &v)?
        .grid
        .data()
        .iter()
        .zip(v.grid.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let grad_errors = (0..configs as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let s = seed.wrapping_add(1000 + i);
            let c = 1 + (i % channels.max(1) as u64) as usize;
            let mlp = TwoLayerMlp::seeded(c, hidden, s, Activation::Gelu)?;
            let x = Grid::random(1, 1, 4 * c, s.wrapping_add(7))?;
            Ok(mlp_gradient_check(&mlp, x.data())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = grad_errors.iter().copied().fold(0.0, f64::max);

    let data = fused.grid.data();
    let mut r = Report::new("fuse-demo");
    r.config("height", height)
        .config("width", width)
        .config("patch", patch)
        .config("channels", channels)
        .config("hidden", hidden)
        .config("configs", configs)
        .config("seed", seed);
    r.metric("patch_rows", rows).metric("patch_cols", cols);
    r.metric("merged_rows", mh).metric("merged_cols", mw);
    r.metric("fused_tokens", mh * mw);
    r.metric("fused_sum", data.iter().sum::<f64>());
    r.metric("fused_mean_abs", data.iter().map(|v| v.abs()).sum::<f64>() / data.len() as f64);
    r.metric("zero_geometry_max_abs_diff", Cell::Text(format!("{identity_err:.3e}")));
    r.metric("gradient_max_rel_error", Cell::Text(format!("{worst:.3e}")));
    r.metric("gradient_check", if worst <= 1e-4 { "pass" } else { "fail" });
    let mut t = Table::new("gradient_checks", &["config", "channels", "rel_error"]);
    for (i, e) in grad_errors.iter().enumerate() {
        t.push(vec![i.into(), (1 + i % channels.max(1)).into(), Cell::Text(format!("{e:.3e}"))]);
    }
    r.tables.push(t);
    Ok(r)
}

pub fn iou(values: &[f64]) -> Result<String> {
    if values.len() != 18 {
        bail!("expected 18 numbers (two boxes of 9), got {}", values.len());
    }
    let a = OrientedBox3D::from_array(values[..9].try_into().expect("length checked")).context("first box")?;
    let b = OrientedBox3D::from_array(values[9..].try_into().expect("length checked")).context("second box")?;
    Ok(format!("{:.6}", iou_3d(&a, &b)))
}

pub fn prompt(a: PromptArgs) -> Result<String> {
    let task = match a.task {
        PromptKind::Grounding => PromptTask::Grounding { query: a.query.context("grounding prompts need --query")? },
        PromptKind::Captioning => {
            let c = a.center.context("captioning prompts need --center X Y Z")?;
            PromptTask::Captioning { center: [c[0], c[1], c[2]] }
        }
        PromptKind::Detection => PromptTask::Detection,
    };
    let opts = PromptOptions { num_frames: a.frames, ..PromptOptions::default() };
    Ok(build_prompt(&task, &opts)?)
}
