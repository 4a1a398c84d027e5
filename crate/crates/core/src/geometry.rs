//! Geometry primitives and parameter blocks: quaternion rotations, the 4x4
//! perspective projection, and the softplus uncertainty mapping.
//!
//! Conventions used throughout the crate:
//! - quaternions are stored unnormalized as `(w, x, y, z)` and normalized at
//!   each use, so the optimizer works on an unconstrained 4-vector;
//! - poses are world-to-camera: `p_cam = R * p_world + t`;
//! - the projection matrix `K` is 4x4 with its 4th row duplicating the depth
//!   row, so the homogeneous divide is by component 3;
//! - the principal point sits at the image center `(W/2, H/2)`.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Depths with `|z|` at or below this are treated as unprojectable.
pub const EPS_DIV: f64 = 1e-8;
/// Quaternions with norm at or below this cannot be normalized.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} is below {EPS_NORM}")]
    DegenerateQuaternion { norm: f64 },
    #[error("frame dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
}

/// Image width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

impl FrameDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    /// Principal point at the image center.
    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Shared focal length in pixels, constant across all frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLength(pub f64);

impl FocalLength {
    pub fn new(f: f64) -> Result<Self, GeometryError> {
        if !(f > 0.0) {
            return Err(GeometryError::InvalidFocal(f));
        }
        Ok(Self(f))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Per-frame camera poses: N quaternions (unnormalized) and N translations.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    pub quats: Vec<Vector4<f64>>,
    pub trans: Vec<Vector3<f64>>,
}

impl PoseSet {
    pub fn identity(num_frames: usize) -> Self {
        Self {
            quats: vec![Vector4::new(1.0, 0.0, 0.0, 0.0); num_frames],
            trans: vec![Vector3::zeros(); num_frames],
        }
    }

    pub fn len(&self) -> usize {
        self.quats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quats.is_empty()
    }
}

/// One learnable 3D world point per surviving tracking trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPointSet {
    pub points: Vec<Vector3<f64>>,
}

impl CalibrationPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unconstrained per-trajectory uncertainty parameters; the positive scale is
/// `softplus(raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    pub raw: Vec<f64>,
}

impl UncertaintySet {
    pub fn constant(value: f64, len: usize) -> Self {
        Self { raw: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Positive scales `softplus(raw)`, elementwise.
    pub fn scales(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| softplus(r)).collect()
    }
}

/// Projected pixels plus signed camera-frame depths. A pixel is valid only
/// where `|depth| > EPS_DIV`; invalid entries hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub pixels: Vec<Vector2<f64>>,
    pub depths: Vec<f64>,
}

impl ProjectionResult {
    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.depths[i].abs() > EPS_DIV
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// Overflow-safe `log(1 + e^x)`.
///
/// For large positive `x` this evaluates as `x + log1p(e^-x)`, which rounds
/// to `x` itself once `e^-x` drops below double precision.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`]: the logistic sigmoid, computed overflow-safely.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rotation matrix of the normalization of `q = (w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let norm = q.norm();
    if norm <= EPS_NORM {
        return Err(GeometryError::DegenerateQuaternion { norm });
    }
    let u = q / norm;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Quaternion `(w, x, y, z)` of a rotation matrix, w >= 0. Shepperd's method:
/// pick the largest of the four squared components to avoid cancellation.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> Vector4<f64> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    if q[0] < 0.0 {
        -q
    } else {
        q
    }
}

/// 4x4 perspective projection matrix derived from the focal length.
///
/// Rows 2 and 3 both hold `[0, 0, 1, 0]`, so applying `K` to a camera-frame
/// homogeneous point leaves the depth in component 3 and the homogeneous
/// divide of the projection is by that component.
pub fn intrinsics(f: FocalLength, dims: FrameDims) -> Matrix4<f64> {
    let c = dims.principal_point();
    Matrix4::new(
        f.0, 0.0, c.x, 0.0, //
        0.0, f.0, c.y, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    )
}

/// Project world points through pose `(q, t)` and focal `f`.
///
/// For each point: `p_cam = R p + t`, `depth = p_cam.z`,
/// `pixel = (f x/z + cx, f y/z + cy)`. Points with `|z| <= EPS_DIV` are
/// flagged invalid (zeroed pixel) but keep their depth.
pub fn project(
    points: &[Vector3<f64>],
    quat: &Vector4<f64>,
    trans: &Vector3<f64>,
    focal: f64,
    dims: FrameDims,
) -> Result<ProjectionResult, GeometryError> {
    let rot = quat_to_rotation(quat)?;
    let c = dims.principal_point();
    let mut pixels = Vec::with_capacity(points.len());
    let mut depths = Vec::with_capacity(points.len());
    for p in points {
        let cam = rot * p + trans;
        let z = cam.z;
        depths.push(z);
        if z.abs() > EPS_DIV {
            pixels.push(Vector2::new(focal * cam.x / z + c.x, focal * cam.y / z + c.y));
        } else {
            pixels.push(Vector2::zeros());
        }
    }
    Ok(ProjectionResult { pixels, depths })
}
