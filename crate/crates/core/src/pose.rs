//! SE(3) extrinsics.
//!
//! Every stored pose is `world_from_camera`: it maps camera-local points into
//! world coordinates. Files using other conventions are converted when read.

use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::{Mat3, Vec3};

/// Largest orthonormality error that ingestion repairs instead of rejecting.
pub const REPAIR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    /// Reads a row-major homogeneous 4×4 matrix. Rotation blocks with small
    /// orthonormality error (≤ [`REPAIR_TOL`]) are snapped to the nearest
    /// rotation; the bottom row must be `[0, 0, 0, 1]`.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > 1e-6) {
            return Err(Error::invalid(format!("pose bottom row must be [0 0 0 1], got {bottom:?}")));
        }
        let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let rotation = Rotation::from_matrix_repaired(r, REPAIR_TOL)?;
        let translation = Vec3::new(m[3], m[7], m[11]);
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Pose::new(rotation, translation))
    }

    #[rustfmt::skip]
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Pose) -> Pose {
        Pose::new(
            self.rotation.then(&inner.rotation),
            self.rotation.apply(&inner.translation) + self.translation,
        )
    }

    pub fn invert(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -rt.apply(&self.translation))
    }
}

/// Converts per-frame `world_from_camera` poses into `first_from_camera`
/// poses, so that element 0 becomes the identity.
pub fn rebase_to_first(world_from_camera: &[Pose]) -> Result<Vec<Pose>> {
    let first = world_from_camera
        .first()
        .ok_or_else(|| Error::invalid("cannot rebase an empty pose list"))?;
    let first_from_world = first.invert();
    Ok(world_from_camera.iter().map(|p| first_from_world.compose(p)).collect())
}
