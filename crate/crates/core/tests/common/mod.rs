//! Reference implementations used to cross-check the library. None of these
//! call into the code under test beyond plain data accessors.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use vgscene_core::dataprep::{Camera, FrameStream, Intrinsics, VisibleAnnotation};
use vgscene_core::detection::LabeledBox;
use vgscene_core::{Mat3, OrientedBox3D, Pose, Vec3};

pub type M3 = [[f64; 3]; 3];

/// `Rz(yaw)·Ry(pitch)·Rx(roll)` written out term by term.
pub fn euler_matrix(yaw: f64, pitch: f64, roll: f64) -> M3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

fn mul(m: &M3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mul_t(m: &M3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// A box as plain numbers: center, full extents, rotation.
pub struct RawBox {
    pub c: [f64; 3],
    pub s: [f64; 3],
    pub r: M3,
}

impl RawBox {
    pub fn from_array(a: [f64; 9]) -> Self {
        RawBox { c: [a[0], a[1], a[2]], s: [a[3], a[4], a[5]], r: euler_matrix(a[6], a[7], a[8]) }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let l = mul_t(&self.r, [p[0] - self.c[0], p[1] - self.c[1], p[2] - self.c[2]]);
        (0..3).all(|k| l[k].abs() <= 0.5 * self.s[k])
    }

    pub fn volume(&self) -> f64 {
        self.s[0] * self.s[1] * self.s[2]
    }

    fn radius(&self) -> f64 {
        0.5 * (self.s[0].powi(2) + self.s[1].powi(2) + self.s[2].powi(2)).sqrt()
    }
}

/// IoU estimated by sampling `samples` points uniformly inside `a` and
/// counting those that fall in `b`.
pub fn monte_carlo_iou(a: [f64; 9], b: [f64; 9], samples: usize, seed: u64) -> f64 {
    let (a, b) = (RawBox::from_array(a), RawBox::from_array(b));
    let gap = ((a.c[0] - b.c[0]).powi(2) + (a.c[1] - b.c[1]).powi(2) + (a.c[2] - b.c[2]).powi(2)).sqrt();
    if gap > a.radius() + b.radius() {
        // No point of `a` can lie in `b`; the estimate would be exactly 0.
        return 0.0;
    }
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let local = [
            (rng.gen::<f64>() - 0.5) * a.s[0],
            (rng.gen::<f64>() - 0.5) * a.s[1],
            (rng.gen::<f64>() - 0.5) * a.s[2],
        ];
        let w = mul(&a.r, local);
        if b.contains([w[0] + a.c[0], w[1] + a.c[1], w[2] + a.c[2]]) {
            hits += 1;
        }
    }
    let inter = a.volume() * hits as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

/// Closed-form IoU of two axis-aligned boxes given as 9-number arrays.
pub fn axis_aligned_iou(a: [f64; 9], b: [f64; 9]) -> f64 {
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = (a[k] - a[k + 3] / 2.0).max(b[k] - b[k + 3] / 2.0);
        let hi = (a[k] + a[k + 3] / 2.0).min(b[k] + b[k + 3] / 2.0);
        inter *= (hi - lo).max(0.0);
    }
    let union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn random_box(rng: &mut impl Rng) -> [f64; 9] {
    let pi = std::f64::consts::PI;
    [
        rng.gen_range(-2.0..=2.0),
        rng.gen_range(-2.0..=2.0),
        rng.gen_range(-2.0..=2.0),
        rng.gen_range(0.1..=2.0),
        rng.gen_range(0.1..=2.0),
        rng.gen_range(0.1..=2.0),
        rng.gen_range(-pi..=pi),
        rng.gen_range(-pi..=pi),
        rng.gen_range(-pi..=pi),
    ]
}

// ---------------------------------------------------------------------------
// Projection

/// Silhouette area in pixels of a box seen by a pinhole camera, found by
/// casting a ray through every pixel center and slab-testing it against the
/// box. Only meaningful when the box lies entirely in front of the camera.
pub fn raster_area(bbox: &OrientedBox3D, camera: &Camera) -> f64 {
    let b = RawBox::from_array(bbox.to_array());
    let m = camera.pose.to_row_major();
    let cam_r: M3 = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
    let origin = [m[3], m[7], m[11]];
    let k = &camera.intrinsics;

    // Pixel window covering the projected corners; for a box in front of the
    // camera its silhouette lies inside this window.
    let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..8 {
        let local = [
            if i & 1 != 0 { 0.5 } else { -0.5 } * b.s[0],
            if i & 2 != 0 { 0.5 } else { -0.5 } * b.s[1],
            if i & 4 != 0 { 0.5 } else { -0.5 } * b.s[2],
        ];
        let w = mul(&b.r, local);
        let p = mul_t(&cam_r, [w[0] + b.c[0] - origin[0], w[1] + b.c[1] - origin[1], w[2] + b.c[2] - origin[2]]);
        assert!(p[2] > 0.0, "raster oracle needs the box in front of the camera");
        let (u, v) = (k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy);
        u0 = u0.min(u);
        u1 = u1.max(u);
        v0 = v0.min(v);
        v1 = v1.max(v);
    }
    let cols = (u0.floor().max(0.0) as usize)..(u1.ceil().min(k.width) as usize);
    let rows = (v0.floor().max(0.0) as usize)..(v1.ceil().min(k.height) as usize);

    let o_local = mul_t(&b.r, [origin[0] - b.c[0], origin[1] - b.c[1], origin[2] - b.c[2]]);
    let mut hits = 0usize;
    for row in rows {
        for col in cols.clone() {
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            let d_cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
            let d_local = mul_t(&b.r, mul(&cam_r, d_cam));
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for a in 0..3 {
                let h = 0.5 * b.s[a];
                if d_local[a].abs() < 1e-15 {
                    if o_local[a].abs() > h {
                        t1 = -1.0;
                    }
                    continue;
                }
                let (ta, tb) = ((-h - o_local[a]) / d_local[a], (h - o_local[a]) / d_local[a]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            if t0 <= t1 {
                hits += 1;
            }
        }
    }
    hits as f64
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
}

/// Camera at `eye` whose optical axis points at `target`.
pub fn look_at(eye: Vec3, target: Vec3, intrinsics: Intrinsics) -> Camera {
    let z = (target - eye).normalize();
    let helper = if z.z.abs() > 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 0.0, 1.0) };
    let x = z.cross(&helper).normalize();
    let y = z.cross(&x);
    let r = Mat3::from_columns(&[x, y, z]);
    let rotation = vgscene_core::Rotation::try_from_matrix(r).unwrap();
    Camera { pose: Pose::new(rotation, eye), intrinsics }
}

pub struct BestFrameFixture {
    pub target: OrientedBox3D,
    pub annotations: Vec<VisibleAnnotation>,
    pub stream: FrameStream,
    /// Frame the rasterizer ranks first among the target's visible frames.
    pub expected_frame: usize,
    pub target_instance: u64,
}

/// Random scene with one target instance, a couple of distractors, and
/// several cameras at varied distances. Fixtures whose top two raster areas
/// are within 5% of each other are regenerated so the answer is unambiguous.
pub fn best_frame_fixture(seed: u64) -> BestFrameFixture {
    let mut rng = SmallRng::seed_from_u64(seed);
    loop {
        let pi = std::f64::consts::PI;
        let target = OrientedBox3D::from_array([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.3..1.5),
            rng.gen_range(0.3..1.5),
            rng.gen_range(0.3..1.5),
            rng.gen_range(-pi..pi),
            0.0,
            0.0,
        ])
        .unwrap();
        let n_frames = rng.gen_range(3..7);
        let cameras: Vec<Camera> = (0..n_frames)
            .map(|_| {
                let dist = rng.gen_range(2.5..9.0);
                let az: f64 = rng.gen_range(-pi..pi);
                let el: f64 = rng.gen_range(0.1..0.8);
                let eye = target.center() + Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin()) * dist;
                let aim = target.center() + Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.3..0.3));
                look_at(eye, aim, default_intrinsics())
            })
            .collect();
        let stream = FrameStream::uniformly_spaced(cameras, 30.0).unwrap();

        let target_instance = rng.gen_range(1..1000u64);
        let mut visible: Vec<usize> = (0..n_frames).filter(|_| rng.gen_bool(0.7)).collect();
        if visible.is_empty() {
            visible.push(rng.gen_range(0..n_frames));
        }
        let mut annotations: Vec<VisibleAnnotation> = visible
            .iter()
            .map(|&frame| VisibleAnnotation { frame, instance_id: target_instance, bbox: target, category: "target".into() })
            .collect();
        // A large distractor around the target (low IoU) and one elsewhere.
        let around = OrientedBox3D::from_array({
            let mut a = target.to_array();
            a[3] *= 3.0;
            a[4] *= 3.0;
            a[5] *= 3.0;
            a
        })
        .unwrap();
        let elsewhere = OrientedBox3D::axis_aligned(target.center() + Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.5, 0.5, 0.5)).unwrap();
        for (id, b) in [(target_instance + 1000, around), (target_instance + 2000, elsewhere)] {
            for frame in 0..n_frames {
                if rng.gen_bool(0.5) {
                    annotations.push(VisibleAnnotation { frame, instance_id: id, bbox: b, category: "other".into() });
                }
            }
        }
        // Shuffle deterministically.
        for i in (1..annotations.len()).rev() {
            annotations.swap(i, rng.gen_range(0..=i));
        }

        let mut areas: Vec<(f64, usize)> = visible.iter().map(|&f| (raster_area(&target, &stream.cameras()[f]), f)).collect();
        areas.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if areas[0].0 < 50.0 || (areas.len() > 1 && areas[1].0 > 0.95 * areas[0].0) {
            continue;
        }
        return BestFrameFixture { target, annotations, stream, expected_frame: areas[0].1, target_instance };
    }
}

// ---------------------------------------------------------------------------
// Detection

/// Largest number of same-label pairs with IoU ≥ `threshold` in any one-to-one
/// assignment, by exhaustive search.
pub fn optimal_true_positives(preds: &[LabeledBox], gts: &[LabeledBox], threshold: f64) -> usize {
    let eligible: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| {
            (0..gts.len())
                .filter(|&g| {
                    gts[g].label.trim().to_lowercase() == p.label.trim().to_lowercase()
                        && monte_free_iou(&p.bbox, &gts[g].bbox) >= threshold
                })
                .collect()
        })
        .collect();
    fn search(i: usize, eligible: &[Vec<usize>], used: &mut Vec<bool>) -> usize {
        if i == eligible.len() {
            return 0;
        }
        let mut best = search(i + 1, eligible, used);
        for &g in &eligible[i] {
            if !used[g] {
                used[g] = true;
                best = best.max(1 + search(i + 1, eligible, used));
                used[g] = false;
            }
        }
        best
    }
    search(0, &eligible, &mut vec![false; gts.len()])
}

/// Detection fixtures use axis-aligned boxes only, where the closed form is
/// exact.
fn monte_free_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    assert!(a.angles() == Vec3::zeros() && b.angles() == Vec3::zeros());
    axis_aligned_iou(a.to_array(), b.to_array())
}

// ---------------------------------------------------------------------------
// Captioning

fn ngrams(words: &[&str], n: usize) -> Vec<String> {
    if words.len() < n {
        return Vec::new();
    }
    (0..=words.len() - n).map(|i| words[i..i + n].join(" ")).collect()
}

/// n-gram → count, n = 1..4, keyed by the space-joined words.
fn precook(sentence: &str) -> HashMap<String, f64> {
    let words: Vec<&str> = sentence.split(' ').filter(|w| !w.is_empty()).collect();
    let mut counts = HashMap::new();
    for n in 1..=4 {
        for g in ngrams(&words, n) {
            *counts.entry(g).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn order(ngram: &str) -> usize {
    ngram.split(' ').count() - 1
}

/// CIDEr-D laid out the way the COCO toolkit computes it. Sentences are
/// already tokenized and space-separated.
pub fn cider_d_oracle(candidates: &[&str], references: &[Vec<&str>]) -> Vec<f64> {
    let crefs: Vec<Vec<HashMap<String, f64>>> = references.iter().map(|rs| rs.iter().map(|r| precook(r)).collect()).collect();
    let ctest: Vec<HashMap<String, f64>> = candidates.iter().map(|c| precook(c)).collect();

    let mut document_frequency: HashMap<String, f64> = HashMap::new();
    for refs in &crefs {
        let set: HashSet<&String> = refs.iter().flat_map(|r| r.keys()).collect();
        for g in set {
            *document_frequency.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let ref_len = (crefs.len() as f64).ln();

    let counts2vec = |cnts: &HashMap<String, f64>| {
        let mut vec: Vec<HashMap<String, f64>> = vec![HashMap::new(); 4];
        let mut norm = [0.0f64; 4];
        let mut length = 0.0;
        for (g, &tf) in cnts {
            let df = document_frequency.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let n = order(g);
            let w = tf * (ref_len - df);
            vec[n].insert(g.clone(), w);
            norm[n] += w * w;
            if n == 1 {
                length += tf;
            }
        }
        (vec, norm.map(f64::sqrt), length)
    };

    // Indexed like the reference toolkit's loop over n-gram orders.
    #[allow(clippy::needless_range_loop)]
    let sim = |hyp: &(Vec<HashMap<String, f64>>, [f64; 4], f64), rf: &(Vec<HashMap<String, f64>>, [f64; 4], f64)| {
        let delta = hyp.2 - rf.2;
        let mut val = [0.0f64; 4];
        for n in 0..4 {
            for (g, &w) in &hyp.0[n] {
                let r = rf.0[n].get(g).copied().unwrap_or(0.0);
                val[n] += w.min(r) * r;
            }
            if hyp.1[n] != 0.0 && rf.1[n] != 0.0 {
                val[n] /= hyp.1[n] * rf.1[n];
            }
            val[n] *= (-(delta * delta) / (2.0 * 6.0 * 6.0)).exp();
        }
        val
    };

    ctest
        .iter()
        .zip(&crefs)
        .map(|(test, refs)| {
            let hyp = counts2vec(test);
            let mut score = [0.0f64; 4];
            for r in refs {
                let s = sim(&hyp, &counts2vec(r));
                for n in 0..4 {
                    score[n] += s[n];
                }
            }
            let mean = score.iter().sum::<f64>() / 4.0;
            mean / refs.len() as f64 * 10.0
        })
        .collect()
}

/// Four images, each with one candidate and four references: 20 sentences.
pub fn caption_corpus() -> (Vec<&'static str>, Vec<Vec<&'static str>>) {
    let candidates = vec![
        "a brown wooden chair next to the table",
        "the white lamp is on the desk",
        "a large bed with blue pillows",
        "this is a black monitor on a desk in the corner",
    ];
    let references = vec![
        vec![
            "a wooden chair beside the dining table",
            "the brown chair is next to a table",
            "a chair made of wood near the table",
            "there is a brown wooden chair by the table",
        ],
        vec![
            "a white lamp sits on the desk",
            "the lamp on the desk is white",
            "a small white desk lamp",
            "there is a lamp on top of the wooden desk",
        ],
        vec![
            "a big bed with two blue pillows",
            "the bed has blue pillows on it",
            "a large bed in the middle of the room",
            "a bed with pillows next to the wall",
        ],
        vec![
            "a black monitor on the desk",
            "the computer monitor is in the corner of the room",
            "a monitor sitting on a desk in the corner",
            "there is a black computer screen on the desk",
        ],
    ];
    (candidates, references)
}
