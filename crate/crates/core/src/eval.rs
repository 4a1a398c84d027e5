//! Trajectory alignment and camera-pose metrics: ATE, RPE translation and
//! RPE rotation.
//!
//! Trajectories at this interface are camera-to-world; the optimizer's
//! internal world-to-camera poses convert through
//! [`TrajectoryEstimate::from_world_to_camera`]. ATE aligns with a Sim(3)
//! transform by default because monocular estimates carry a free global
//! scale; both metrics aggregate with RMSE, the TUM-benchmark convention.

use std::fmt::Write as _;

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{quat_to_rotation, rotation_to_quat, FocalLength, GeometryError, PoseSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectories have different lengths: {est} vs {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("alignment needs at least 3 non-collinear positions")]
    DegenerateAlignment,
    #[error("frame gap {delta} must satisfy 1 <= delta < {frames}")]
    InvalidDelta { delta: usize, frames: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("pose file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Similarity alignment: rotation, translation and scale.
    Sim3,
    /// Rigid alignment: rotation and translation, scale fixed at 1.
    SE3,
    /// No alignment at all (diagnostic use).
    None,
}

/// Closed-form similarity transform mapping estimate onto ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub offset: Vector3<f64>,
    pub mode: AlignMode,
}

impl AlignmentResult {
    pub fn identity(mode: AlignMode) -> Self {
        Self { rotation: Matrix3::identity(), scale: 1.0, offset: Vector3::zeros(), mode }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.offset
    }
}

/// Per-frame camera-to-world poses plus an optional focal length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub poses: Vec<Isometry3<f64>>,
    pub focal: Option<f64>,
}

impl TrajectoryEstimate {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Camera centers in world coordinates.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation.vector).collect()
    }

    /// Convert the optimizer's world-to-camera poses (`p_cam = R p + t`) to
    /// camera-to-world: `R_c2w = R^T`, center `C = -R^T t`.
    pub fn from_world_to_camera(poses: &PoseSet, focal: Option<f64>) -> Result<Self, EvalError> {
        let mut out = Vec::with_capacity(poses.len());
        for (q, t) in poses.quats.iter().zip(&poses.trans) {
            let r = quat_to_rotation(q)?;
            let r_c2w = r.transpose();
            let center = -(r_c2w * t);
            let quat = rotation_to_quat(&r_c2w);
            let uq = UnitQuaternion::from_quaternion(Quaternion::new(quat[0], quat[1], quat[2], quat[3]));
            out.push(Isometry3::from_parts(Translation3::from(center), uq));
        }
        Ok(Self { poses: out, focal })
    }

    /// Inverse of [`Self::from_world_to_camera`].
    pub fn to_world_to_camera(&self) -> PoseSet {
        let mut quats = Vec::with_capacity(self.len());
        let mut trans = Vec::with_capacity(self.len());
        for pose in &self.poses {
            let r_c2w = pose.rotation.to_rotation_matrix().into_inner();
            let r = r_c2w.transpose();
            quats.push(rotation_to_quat(&r));
            trans.push(-(r * pose.translation.vector));
        }
        PoseSet { quats, trans }
    }
}

/// Umeyama closed-form least-squares similarity: minimizes
/// `sum ||s R est + d - gt||^2`; scale forced to 1 when `with_scale` is
/// false. Fewer than 3 positions or a collinear set is degenerate.
pub fn umeyama_align(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    with_scale: bool,
) -> Result<AlignmentResult, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: gt.len() });
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateAlignment);
    }
    let nf = n as f64;
    let mu_e: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_g: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / nf;

    let mut var_e = 0.0;
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        let de = e - mu_e;
        let dg = g - mu_g;
        var_e += de.norm_squared();
        cov += dg * de.transpose();
    }
    var_e /= nf;
    cov /= nf;

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(EvalError::DegenerateAlignment)?;
    let v_t = svd.v_t.ok_or(EvalError::DegenerateAlignment)?;
    let d = svd.singular_values;
    // Collinear positions leave the rotation about the line undetermined.
    if d[1] <= 1e-12 + 1e-9 * d[0] {
        return Err(EvalError::DegenerateAlignment);
    }

    let mut s_fix = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_fix[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_fix) * v_t;
    let scale = if with_scale {
        if var_e <= 0.0 {
            return Err(EvalError::DegenerateAlignment);
        }
        d.dot(&s_fix) / var_e
    } else {
        1.0
    };
    let offset = mu_g - scale * (rotation * mu_e);
    Ok(AlignmentResult {
        rotation,
        scale,
        offset,
        mode: if with_scale { AlignMode::Sim3 } else { AlignMode::SE3 },
    })
}

/// Absolute trajectory error: RMSE of camera-center distances after
/// alignment.
pub fn ate(est: &TrajectoryEstimate, gt: &TrajectoryEstimate, mode: AlignMode) -> Result<f64, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: gt.len() });
    }
    let pe = est.positions();
    let pg = gt.positions();
    let align = match mode {
        AlignMode::Sim3 => umeyama_align(&pe, &pg, true)?,
        AlignMode::SE3 => umeyama_align(&pe, &pg, false)?,
        AlignMode::None => AlignmentResult::identity(AlignMode::None),
    };
    let sum: f64 = pe
        .iter()
        .zip(&pg)
        .map(|(e, g)| (align.apply(e) - g).norm_squared())
        .sum();
    Ok((sum / pe.len() as f64).sqrt())
}

/// Relative pose error over frame gap `delta`: for each i the discrepancy
/// `E_i = (gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d})`; returns the RMSE of
/// the translation norm and of the rotation angle in degrees.
pub fn rpe(
    est: &TrajectoryEstimate,
    gt: &TrajectoryEstimate,
    delta: usize,
) -> Result<(f64, f64), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: gt.len() });
    }
    let n = est.len();
    if delta == 0 || delta >= n {
        return Err(EvalError::InvalidDelta { delta, frames: n });
    }
    let mut trans_sq = 0.0;
    let mut rot_sq = 0.0;
    let count = n - delta;
    for i in 0..count {
        let rel_gt = gt.poses[i].inverse() * gt.poses[i + delta];
        let rel_est = est.poses[i].inverse() * est.poses[i + delta];
        let err = rel_gt.inverse() * rel_est;
        trans_sq += err.translation.vector.norm_squared();
        let angle = err.rotation.angle().to_degrees();
        rot_sq += angle * angle;
    }
    Ok(((trans_sq / count as f64).sqrt(), (rot_sq / count as f64).sqrt()))
}

/// Serialize in the TUM trajectory text convention: one line per frame,
/// `timestamp tx ty tz qx qy qz qw`, with the frame index as timestamp and
/// the focal length on a `# focal <value>` comment line.
pub fn write_pose_file(traj: &TrajectoryEstimate) -> String {
    let mut s = String::new();
    if let Some(f) = traj.focal {
        let _ = writeln!(s, "# focal {f}");
    }
    for (i, pose) in traj.poses.iter().enumerate() {
        let t = pose.translation.vector;
        let q = pose.rotation.into_inner();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            i, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    s
}

pub fn parse_pose_file(text: &str) -> Result<TrajectoryEstimate, EvalError> {
    let mut poses = Vec::new();
    let mut focal = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let fields: Vec<&str> = comment.split_whitespace().collect();
            if fields.len() == 2 && fields[0] == "focal" {
                focal = Some(parse_field(fields[1], lineno)?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(EvalError::Parse {
                line: lineno,
                message: "expected `timestamp tx ty tz qx qy qz qw`".into(),
            });
        }
        let v: Vec<f64> = fields
            .iter()
            .map(|f| parse_field(f, lineno))
            .collect::<Result<_, _>>()?;
        let quat = Quaternion::new(v[7], v[4], v[5], v[6]);
        if quat.norm() <= 1e-12 {
            return Err(EvalError::Parse { line: lineno, message: "zero quaternion".into() });
        }
        poses.push(Isometry3::from_parts(
            Translation3::new(v[1], v[2], v[3]),
            UnitQuaternion::from_quaternion(quat),
        ));
    }
    Ok(TrajectoryEstimate { poses, focal })
}

fn parse_field(s: &str, line: usize) -> Result<f64, EvalError> {
    s.parse()
        .map_err(|_| EvalError::Parse { line, message: format!("invalid number `{s}`") })
}

/// Convenience for exporting ground truth: world-to-camera poses plus focal.
pub fn pose_file_from_world_to_camera(
    poses: &PoseSet,
    focal: Option<FocalLength>,
) -> Result<String, EvalError> {
    let traj = TrajectoryEstimate::from_world_to_camera(poses, focal.map(|f| f.value()))?;
    Ok(write_pose_file(&traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_unit_quat(rng: &mut StdRng) -> UnitQuaternion<f64> {
        loop {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() > 0.1 {
                return UnitQuaternion::from_quaternion(q);
            }
        }
    }

    fn random_trajectory(rng: &mut StdRng, n: usize) -> TrajectoryEstimate {
        let poses = (0..n)
            .map(|i| {
                Isometry3::from_parts(
                    Translation3::new(
                        i as f64 * 0.5 + rng.random_range(-0.1..0.1),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    random_unit_quat(rng),
                )
            })
            .collect();
        TrajectoryEstimate { poses, focal: None }
    }

    fn apply_sim3(
        traj: &TrajectoryEstimate,
        rot: &UnitQuaternion<f64>,
        scale: f64,
        offset: &Vector3<f64>,
    ) -> TrajectoryEstimate {
        let poses = traj
            .poses
            .iter()
            .map(|p| {
                Isometry3::from_parts(
                    Translation3::from(scale * (rot * p.translation.vector) + offset),
                    rot * p.rotation,
                )
            })
            .collect();
        TrajectoryEstimate { poses, focal: traj.focal }
    }

    #[test]
    fn umeyama_identity_and_scale() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let a = umeyama_align(&pts, &pts, true).unwrap();
        assert_abs_diff_eq!(a.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(a.scale, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.offset, Vector3::zeros(), epsilon = 1e-12);

        let half: Vec<Vector3<f64>> = pts.iter().map(|p| 0.5 * p).collect();
        let a = umeyama_align(&half, &pts, true).unwrap();
        assert_abs_diff_eq!(a.scale, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn umeyama_recovers_random_similarity() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..50 {
            let est: Vec<Vector3<f64>> = (0..20)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
                .collect();
            let rot = random_unit_quat(&mut rng).to_rotation_matrix().into_inner();
            let scale = rng.random_range(0.2..4.0);
            let offset = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let gt: Vec<Vector3<f64>> =
                est.iter().map(|p| scale * (rot * p) + offset).collect();

            let a = umeyama_align(&est, &gt, true).unwrap();
            assert_abs_diff_eq!(a.rotation, rot, epsilon = 1e-9);
            assert_abs_diff_eq!(a.scale, scale, epsilon = 1e-9);
            assert_abs_diff_eq!(a.offset, offset, epsilon = 1e-9);
            let residual: f64 =
                est.iter().zip(&gt).map(|(e, g)| (a.apply(e) - g).norm()).sum();
            assert!(residual < 1e-8);
        }
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let two = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            umeyama_align(&two, &two, true),
            Err(EvalError::DegenerateAlignment)
        ));
        let collinear: Vec<Vector3<f64>> =
            (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&collinear, &collinear, true),
            Err(EvalError::DegenerateAlignment)
        ));
    }

    #[test]
    fn ate_basics() {
        let mut rng = StdRng::seed_from_u64(23);
        let gt = random_trajectory(&mut rng, 12);
        assert!(ate(&gt, &gt, AlignMode::Sim3).unwrap() < 1e-12);

        // Constant offset is absorbed by SE3 alignment.
        let offset = Vector3::new(3.0, -1.0, 2.0);
        let shifted = apply_sim3(&gt, &UnitQuaternion::identity(), 1.0, &offset);
        assert!(ate(&shifted, &gt, AlignMode::SE3).unwrap() < 1e-9);

        // One frame displaced by delta, no alignment: RMSE = delta / sqrt(N).
        let mut displaced = gt.clone();
        let delta = 0.7;
        displaced.poses[4].translation.vector += Vector3::new(delta, 0.0, 0.0);
        let expected = delta / (gt.len() as f64).sqrt();
        assert_abs_diff_eq!(
            ate(&displaced, &gt, AlignMode::None).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ate_sim3_invariant_to_global_similarity() {
        let mut rng = StdRng::seed_from_u64(29);
        let gt = random_trajectory(&mut rng, 15);
        let mut est = random_trajectory(&mut rng, 15);
        for (e, g) in est.poses.iter_mut().zip(&gt.poses) {
            e.translation.vector = g.translation.vector
                + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        }
        let base = ate(&est, &gt, AlignMode::Sim3).unwrap();
        for _ in 0..10 {
            let rot = random_unit_quat(&mut rng);
            let scale = rng.random_range(0.3..3.0);
            let offset = Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0));
            let transformed = apply_sim3(&est, &rot, scale, &offset);
            let v = ate(&transformed, &gt, AlignMode::Sim3).unwrap();
            assert_abs_diff_eq!(v, base, epsilon = 1e-9);
        }
    }

    #[test]
    fn rpe_basics() {
        let mut rng = StdRng::seed_from_u64(31);
        let gt = random_trajectory(&mut rng, 10);
        let (t, r) = rpe(&gt, &gt, 1).unwrap();
        assert!(t < 1e-12 && r < 1e-12);

        // Estimate rotated 1 degree per frame more about a fixed axis.
        let gt_straight = TrajectoryEstimate {
            poses: (0..10)
                .map(|i| {
                    Isometry3::from_parts(
                        Translation3::new(i as f64, 0.0, 0.0),
                        UnitQuaternion::identity(),
                    )
                })
                .collect(),
            focal: None,
        };
        let est = TrajectoryEstimate {
            poses: (0..10)
                .map(|i| {
                    let angle = (i as f64).to_radians();
                    Isometry3::from_parts(
                        Translation3::new(i as f64, 0.0, 0.0),
                        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
                    )
                })
                .collect(),
            focal: None,
        };
        let (_, rot) = rpe(&est, &gt_straight, 1).unwrap();
        assert_abs_diff_eq!(rot, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rpe_matches_composition_oracle() {
        let mut rng = StdRng::seed_from_u64(37);
        let gt = random_trajectory(&mut rng, 14);
        let mut est = gt.clone();
        for p in &mut est.poses {
            p.translation.vector += Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
            p.rotation = random_unit_quat(&mut rng).powf(0.01) * p.rotation;
        }
        let delta = 2;
        let (t, r) = rpe(&est, &gt, delta).unwrap();

        // Literal per-pair matrix composition.
        let mut ts = Vec::new();
        let mut rs = Vec::new();
        for i in 0..gt.len() - delta {
            let e = (gt.poses[i].inverse() * gt.poses[i + delta]).inverse()
                * (est.poses[i].inverse() * est.poses[i + delta]);
            ts.push(e.translation.vector.norm());
            rs.push(e.rotation.angle().to_degrees());
        }
        let t_oracle = (ts.iter().map(|v| v * v).sum::<f64>() / ts.len() as f64).sqrt();
        let r_oracle = (rs.iter().map(|v| v * v).sum::<f64>() / rs.len() as f64).sqrt();
        assert_abs_diff_eq!(t, t_oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(r, r_oracle, epsilon = 1e-10);
    }

    #[test]
    fn rpe_invariant_to_global_rigid_transform() {
        let mut rng = StdRng::seed_from_u64(41);
        let gt = random_trajectory(&mut rng, 12);
        let mut est = gt.clone();
        for p in &mut est.poses {
            p.translation.vector += Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        }
        let (t0, r0) = rpe(&est, &gt, 1).unwrap();
        let rot = random_unit_quat(&mut rng);
        let offset = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let moved = apply_sim3(&est, &rot, 1.0, &offset);
        let (t1, r1) = rpe(&moved, &gt, 1).unwrap();
        assert_abs_diff_eq!(t0, t1, epsilon = 1e-9);
        assert_abs_diff_eq!(r0, r1, epsilon = 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut rng = StdRng::seed_from_u64(43);
        let a = random_trajectory(&mut rng, 10);
        let b = random_trajectory(&mut rng, 9);
        assert!(matches!(ate(&a, &b, AlignMode::Sim3), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(rpe(&a, &b, 1), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn pose_file_round_trip_with_focal() {
        let mut rng = StdRng::seed_from_u64(47);
        let mut traj = random_trajectory(&mut rng, 8);
        traj.focal = Some(312.5);
        let text = write_pose_file(&traj);
        let parsed = parse_pose_file(&text).unwrap();
        assert_eq!(parsed.focal, Some(312.5));
        assert_eq!(parsed.len(), traj.len());
        for (a, b) in parsed.poses.iter().zip(&traj.poses) {
            assert_abs_diff_eq!(a.translation.vector, b.translation.vector, epsilon = 1e-12);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        }
    }

    #[test]
    fn world_to_camera_conversion_round_trips() {
        let mut rng = StdRng::seed_from_u64(53);
        let mut quats = Vec::new();
        let mut trans = Vec::new();
        for _ in 0..6 {
            let q = nalgebra::Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0f64));
            if q.norm() < 0.1 {
                continue;
            }
            quats.push(q);
            trans.push(Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
        }
        let poses = PoseSet { quats, trans };
        let traj = TrajectoryEstimate::from_world_to_camera(&poses, Some(100.0)).unwrap();
        let back = traj.to_world_to_camera();
        for i in 0..poses.len() {
            let r0 = quat_to_rotation(&poses.quats[i]).unwrap();
            let r1 = quat_to_rotation(&back.quats[i]).unwrap();
            assert_abs_diff_eq!(r0, r1, epsilon = 1e-12);
            assert_abs_diff_eq!(poses.trans[i], back.trans[i], epsilon = 1e-12);
        }
        // A world point in front of the camera maps consistently.
        let p_world = Vector3::new(0.3, -0.2, 4.0);
        let r = quat_to_rotation(&poses.quats[0]).unwrap();
        let p_cam = r * p_world + poses.trans[0];
        let p_back = traj.poses[0].transform_point(&nalgebra::Point3::from(p_cam));
        assert_abs_diff_eq!(p_back.coords, p_world, epsilon = 1e-12);
    }
}
