//! vgscene-core: the non-neural machinery around a video-based 3D scene
//! understanding model.
//!
//! * [`geometry`] – 9-DoF oriented boxes, Euler rotations and exact rotated-box
//!   IoU by convex-polytope clipping.
//! * [`pose`] – SE(3) extrinsics, composition/inversion and first-frame rebasing.
//! * [`protocol`] – the plain-text box protocol, task prompts and tolerant
//!   parsing of JSON-bearing model responses.
//! * [`grounding`], [`detection`], [`caption`] – the three scorers.
//! * [`fusion`] – a small numeric simulator of 2×2 token merging and additive
//!   geometry/visual fusion with gradient checking.
//! * [`dataprep`] – frame sampling, projected-area best-frame selection and
//!   annotation rebasing, plus the scene bundle reader.
//! * [`report`] – deterministic machine/human report rendering.

pub mod caption;
pub mod dataprep;
pub mod detection;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grounding;
pub mod pose;
pub mod protocol;
pub mod records;
pub mod report;

pub use error::{Error, ParseError, Result};
pub use geometry::{iou_3d, OrientedBox3D, Rotation};
pub use pose::Pose;
pub use report::Report;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
