//! Oriented 3D boxes and exact rotated-box IoU.
//!
//! Rotations follow the intrinsic yaw-pitch-roll convention
//! `R = Rz(yaw) · Ry(pitch) · Rx(roll)`. Box intersection clips the corner
//! polytope of one box against the six half-spaces of the other and measures
//! the result with the divergence theorem.

use nalgebra::{Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::{Mat3, Vec3};

/// Vertices within this distance of a clipping plane count as inside it.
pub const CLIP_EPS: f64 = 1e-12;
/// Volumes below this are reported as exactly zero.
pub const VOLUME_EPS: f64 = 1e-15;
/// `|R31|` at or above `1 - GIMBAL_EPS` is treated as gimbal lock.
pub const GIMBAL_EPS: f64 = 1e-9;
/// Allowed orthonormality error for a matrix to be accepted as a rotation.
pub const ORTHO_TOL: f64 = 1e-9;

/// Proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        if !(yaw.is_finite() && pitch.is_finite() && roll.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite Euler angles ({yaw}, {pitch}, {roll})"
            )));
        }
        Ok(Self::from_euler_unchecked(yaw, pitch, roll))
    }

    fn from_euler_unchecked(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        Rotation(Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        ))
    }

    /// Recovers `(yaw, pitch, roll)` under the same convention.
    ///
    /// At gimbal lock (`|pitch| = π/2`) roll is set to zero and the remaining
    /// rotation about the shared axis is folded into yaw.
    pub fn to_euler(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let r31 = m[(2, 0)].clamp(-1.0, 1.0);
        let pitch = (-r31).asin();
        if r31.abs() >= 1.0 - GIMBAL_EPS {
            let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
            (yaw, pitch, 0.0)
        } else {
            let yaw = m[(1, 0)].atan2(m[(0, 0)]);
            let roll = m[(2, 1)].atan2(m[(2, 2)]);
            (yaw, pitch, roll)
        }
    }

    /// Accepts `m` only if it is already a rotation within [`ORTHO_TOL`].
    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation has non-finite entries"));
        }
        let err = orthonormality_error(&m);
        if err > ORTHO_TOL || (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!(
                "matrix is not a proper rotation (orthonormality error {err:.3e}, det {:.12})",
                m.determinant()
            )));
        }
        Ok(Rotation(m))
    }

    /// Like [`Rotation::try_from_matrix`], but matrices whose orthonormality
    /// error lies in `(ORTHO_TOL, max_error]` are projected onto the nearest
    /// rotation.
    pub fn from_matrix_repaired(m: Mat3, max_error: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation has non-finite entries"));
        }
        let err = orthonormality_error(&m);
        if err > max_error {
            return Err(Error::invalid(format!(
                "rotation orthonormality error {err:.3e} exceeds {max_error:.1e}"
            )));
        }
        if m.determinant() <= 0.0 {
            return Err(Error::invalid("rotation matrix has non-positive determinant"));
        }
        if err <= ORTHO_TOL && (m.determinant() - 1.0).abs() <= ORTHO_TOL {
            return Ok(Rotation(m));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut fix = Mat3::identity();
        fix[(2, 2)] = (u * v_t).determinant().signum();
        Ok(Rotation(u * fix * v_t))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn then(&self, inner: &Rotation) -> Self {
        Rotation(self.0 * inner.0)
    }

    /// Column `k` of the matrix, i.e. the image of local axis `k`.
    pub fn axis(&self, k: usize) -> Vec3 {
        self.0.column(k).into_owned()
    }
}

/// Max-abs entry of `RᵀR − I`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).amax()
}

/// 9-DoF box: center, size `(w, h, d)` along the local x/y/z axes, and
/// `(yaw, pitch, roll)` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3D {
    center: Vec3,
    size: Vec3,
    angles: Vec3,
}

impl OrientedBox3D {
    pub fn new(center: Vec3, size: Vec3, angles: Vec3) -> Result<Self> {
        if center.iter().chain(size.iter()).chain(angles.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("box has non-finite components"));
        }
        if size.iter().any(|&s| s < 0.0) {
            return Err(Error::invalid(format!(
                "box size must be non-negative, got ({}, {}, {})",
                size.x, size.y, size.z
            )));
        }
        Ok(OrientedBox3D { center, size, angles })
    }

    /// Zero-angle box.
    pub fn axis_aligned(center: Vec3, size: Vec3) -> Result<Self> {
        Self::new(center, size, Vec3::zeros())
    }

    /// `[x, y, z, w, h, d, yaw, pitch, roll]`.
    pub fn from_array(v: [f64; 9]) -> Result<Self> {
        Self::new(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
            Vec3::new(v[6], v[7], v[8]),
        )
    }

    pub fn to_array(&self) -> [f64; 9] {
        let (c, s, a) = (self.center, self.size, self.angles);
        [c.x, c.y, c.z, s.x, s.y, s.z, a.x, a.y, a.z]
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    /// `(yaw, pitch, roll)`.
    pub fn angles(&self) -> Vec3 {
        self.angles
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_euler_unchecked(self.angles.x, self.angles.y, self.angles.z)
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    pub fn is_degenerate(&self) -> bool {
        self.size.iter().any(|&s| s == 0.0)
    }

    /// Corners `center + R · (±w/2, ±h/2, ±d/2)`.
    ///
    /// Corner `i` takes the `+` sign on local x when bit 0 of `i` is set, on
    /// local y for bit 1 and on local z for bit 2, so corner 0 is
    /// `(−, −, −)` and corner 7 is `(+, +, +)`.
    pub fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation();
        let half = self.size * 0.5;
        std::array::from_fn(|i| {
            let sign = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            let local = Vec3::new(sign(0) * half.x, sign(1) * half.y, sign(2) * half.z);
            self.center + r.apply(&local)
        })
    }

    /// Whether `p` lies inside the closed box.
    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.rotation().transpose().apply(&(p - self.center));
        (0..3).all(|k| local[k].abs() <= 0.5 * self.size[k])
    }

    pub fn to_polytope(&self) -> ConvexPolytope {
        let c = self.corners();
        let faces = BOX_FACES
            .iter()
            .map(|f| f.iter().map(|&i| c[i]).collect())
            .collect();
        ConvexPolytope { faces }
    }

    /// The six bounding planes as `(outward normal, offset)` with the box
    /// being `{x : n·x ≤ offset}` for every plane.
    pub fn half_spaces(&self) -> [(Vec3, f64); 6] {
        let r = self.rotation();
        std::array::from_fn(|i| {
            let axis = r.axis(i / 2);
            let n = if i % 2 == 0 { axis } else { -axis };
            (n, n.dot(&self.center) + 0.5 * self.size[i / 2])
        })
    }

    fn bounding_radius(&self) -> f64 {
        0.5 * self.size.norm()
    }
}

/// Outward counter-clockwise face loops over the corner enumeration of
/// [`OrientedBox3D::corners`].
const BOX_FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // -x
    [1, 3, 7, 5], // +x
    [0, 1, 5, 4], // -y
    [2, 6, 7, 3], // +y
    [0, 2, 3, 1], // -z
    [4, 5, 7, 6], // +z
];

/// Convex polytope stored as outward-wound planar face loops.
#[derive(Debug, Clone, Default)]
pub struct ConvexPolytope {
    pub faces: Vec<Vec<Vec3>>,
}

impl ConvexPolytope {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vec3> {
        self.faces.iter().flatten()
    }

    /// Divergence-theorem volume from fan-triangulated faces.
    pub fn volume(&self) -> f64 {
        let Some(origin) = self.vertices().next().copied() else {
            return 0.0;
        };
        let mut six_v = 0.0;
        for face in &self.faces {
            let p0 = face[0] - origin;
            for w in face[1..].windows(2) {
                let (p1, p2) = (w[0] - origin, w[1] - origin);
                six_v += p0.dot(&p1.cross(&p2));
            }
        }
        let v = six_v / 6.0;
        if v < VOLUME_EPS {
            0.0
        } else {
            v
        }
    }

    /// Keeps the part with `normal · x ≤ offset`, closing the cut with a cap
    /// face whose outward normal is `normal`.
    pub fn clip(&self, normal: &Vec3, offset: f64) -> ConvexPolytope {
        let dist = |p: &Vec3| normal.dot(p) - offset;
        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut section: Vec<Vec3> = Vec::new();

        for face in &self.faces {
            let clipped = clip_polygon(face, &dist, &mut section);
            if clipped.len() < 3 || clipped.iter().all(|p| dist(p).abs() <= CLIP_EPS) {
                continue;
            }
            faces.push(clipped);
        }
        if faces.is_empty() {
            return ConvexPolytope::default();
        }
        if let Some(cap) = planar_hull(&section, normal) {
            faces.push(cap);
        }
        ConvexPolytope { faces }
    }
}

/// Sutherland-Hodgman against one plane. On-plane vertices and edge
/// crossings are appended to `section`.
fn clip_polygon(poly: &[Vec3], dist: &impl Fn(&Vec3) -> f64, section: &mut Vec<Vec3>) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let Some(mut prev) = poly.last() else {
        return out;
    };
    let mut d_prev = dist(prev);
    for cur in poly {
        let d_cur = dist(cur);
        let prev_in = d_prev <= CLIP_EPS;
        let cur_in = d_cur <= CLIP_EPS;
        if prev_in != cur_in {
            let t = d_prev / (d_prev - d_cur);
            let x = prev + (cur - prev) * t;
            out.push(x);
            section.push(x);
        }
        if cur_in {
            out.push(*cur);
            if d_cur.abs() <= CLIP_EPS {
                section.push(*cur);
            }
        }
        prev = cur;
        d_prev = d_cur;
    }
    out
}

/// Convex hull of points lying in a plane, wound counter-clockwise about
/// `normal`. `None` when the hull has no area.
fn planar_hull(points: &[Vec3], normal: &Vec3) -> Option<Vec<Vec3>> {
    if points.len() < 3 {
        return None;
    }
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let planar: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p.dot(&u), p.dot(&v))).collect();
    let hull = convex_hull_2d(&planar);
    if hull.len() < 3 || polygon_area(&hull.iter().map(|&i| planar[i]).collect::<Vec<_>>()) <= 0.0 {
        return None;
    }
    Some(hull.into_iter().map(|i| points[i]).collect())
}

/// Andrew's monotone chain. Returns indices of the hull in counter-clockwise
/// order, collinear and duplicate points dropped.
pub fn convex_hull_2d(points: &[Vector2<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y))
    });
    if idx.len() < 3 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (points[o], points[a], points[b]);
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for &i in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in idx.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull
}

/// Signed shoelace area (positive for counter-clockwise loops).
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice
}

pub fn box_volume(b: &OrientedBox3D) -> f64 {
    b.volume()
}

/// Volume of `a ∩ b`, clamped to `[0, min(vol a, vol b)]`.
pub fn intersection_volume(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    if (a.center - b.center).norm() > a.bounding_radius() + b.bounding_radius() {
        return 0.0;
    }
    let mut poly = a.to_polytope();
    for (n, offset) in b.half_spaces() {
        poly = poly.clip(&n, offset);
        if poly.is_empty() {
            return 0.0;
        }
    }
    poly.volume().min(a.volume()).min(b.volume())
}

/// Rotated-box IoU; zero when the union has no volume.
pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Re-expresses `b` through a rigid transform; the size is unchanged and the
/// composed rotation is decomposed back into Euler angles.
pub fn transform_box(b: &OrientedBox3D, pose: &Pose) -> OrientedBox3D {
    let center = pose.apply(&b.center);
    let (yaw, pitch, roll) = pose.rotation.then(&b.rotation()).to_euler();
    OrientedBox3D {
        center,
        size: b.size,
        angles: Vec3::new(yaw, pitch, roll),
    }
}
