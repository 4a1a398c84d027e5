//! Exact analytic gradients of the total loss with respect to every
//! parameter block, including the chain through quaternion normalization,
//! the projection divide, per-trajectory error averaging, the heavy-tailed
//! log and the softplus mapping.
//!
//! Frames are processed in parallel into per-frame partial gradients, then
//! reduced in ascending frame order so results are bit-identical regardless
//! of thread count.

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::filters::SupervisionSet;
use crate::geometry::{quat_to_rotation, sigmoid, softplus, EPS_DIV};

use super::loss::{acp_from_residuals, residuals, GAMMA_FLOOR};
use super::{AcpPower, ActiveBlocks, DepthRegMode, LossKind, OptimError, OptimizerConfig, ParameterState};

/// Per-block gradients, shaped like the parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub points: Vec<Vector3<f64>>,
    pub focal: f64,
    pub quats: Vec<Vector4<f64>>,
    pub trans: Vec<Vector3<f64>>,
    pub raw: Vec<f64>,
}

impl Gradients {
    pub fn zeros(num_points: usize, num_frames: usize) -> Self {
        Self {
            points: vec![Vector3::zeros(); num_points],
            focal: 0.0,
            quats: vec![Vector4::zeros(); num_frames],
            trans: vec![Vector3::zeros(); num_frames],
            raw: vec![0.0; num_points],
        }
    }

    pub fn norms(&self) -> super::BlockNorms {
        super::BlockNorms {
            points: self.points.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt(),
            focal: self.focal.abs(),
            quats: self.quats.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt(),
            trans: self.trans.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt(),
            raw: self.raw.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

struct FrameGrad {
    quat: Vector4<f64>,
    trans: Vector3<f64>,
    focal: f64,
    /// Sparse per-trajectory point contributions of this frame.
    points: Vec<(usize, Vector3<f64>)>,
}

/// Analytic gradient of the total loss for the active blocks; inactive
/// blocks receive exact zeros.
pub fn gradients(
    state: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    active: ActiveBlocks,
) -> Result<Gradients, OptimError> {
    let res = residuals(state, sup)?;
    let acp = acp_from_residuals(&res, sup)?;
    let h = sup.num_trajectories();
    let n = sup.num_frames;
    let budget = sup.budget;
    let total_obs = (n * budget) as f64;

    let counts = trajectory_counts(sup);

    // dL/de for one observation of trajectory `h` (e = squared pixel error).
    let obs_weight: Vec<f64> = match config.loss {
        LossKind::Cauchy => acp
            .iter()
            .zip(&state.uncertainty.raw)
            .zip(&counts)
            .map(|((&e, &r), &c)| {
                let gamma = softplus(r).max(GAMMA_FLOOR);
                let dl_de_acp = match config.acp_power {
                    AcpPower::Squared => 2.0 * e / (gamma * gamma + e * e),
                    AcpPower::Unsquared => 1.0 / (gamma * gamma + e),
                };
                dl_de_acp / (h as f64 * c as f64)
            })
            .collect(),
        LossKind::MeanSquared => vec![1.0 / total_obs; h],
    };

    let per_frame: Vec<FrameGrad> = (0..n)
        .into_par_iter()
        .map(|f| frame_backward(state, sup, config, &obs_weight, f, total_obs))
        .collect();

    let mut grads = Gradients::zeros(h, n);
    for (f, fg) in per_frame.into_iter().enumerate() {
        grads.quats[f] = fg.quat;
        grads.trans[f] = fg.trans;
        grads.focal += fg.focal;
        for (id, g) in fg.points {
            grads.points[id] += g;
        }
    }

    if let LossKind::Cauchy = config.loss {
        for id in 0..h {
            let r = state.uncertainty.raw[id];
            let gamma = softplus(r).max(GAMMA_FLOOR);
            let a = match config.acp_power {
                AcpPower::Squared => acp[id] * acp[id],
                AcpPower::Unsquared => acp[id],
            };
            let dl_dgamma = (1.0 - a / (gamma * gamma)) / (gamma + a / gamma) / h as f64;
            let dgamma_draw = if softplus(r) > GAMMA_FLOOR { sigmoid(r) } else { 0.0 };
            grads.raw[id] = dl_dgamma * dgamma_draw;
        }
    }

    mask_inactive(&mut grads, active);
    check_finite(&grads)?;
    Ok(grads)
}

fn trajectory_counts(sup: &SupervisionSet) -> Vec<usize> {
    let mut counts = vec![0usize; sup.num_trajectories()];
    for entries in &sup.frames {
        for (_, id) in entries {
            counts[*id] += 1;
        }
    }
    counts
}

fn frame_backward(
    state: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    obs_weight: &[f64],
    f: usize,
    total_obs: f64,
) -> FrameGrad {
    let quat = &state.poses.quats[f];
    let rot = quat_to_rotation(quat).expect("optimization states keep quaternions non-degenerate");
    let t = &state.poses.trans[f];
    let focal = state.focal.value();
    let c = sup.dims.principal_point();

    let mut g_trans = Vector3::zeros();
    let mut g_focal = 0.0;
    let mut g_rot = Matrix3::zeros();
    let mut g_points = Vec::with_capacity(sup.frames[f].len());

    for (observed, id) in &sup.frames[f] {
        let p = state.points.points[*id];
        let cam = rot * p + t;
        let z = cam.z;
        let mut g_cam = Vector3::zeros();

        if z.abs() > EPS_DIV {
            let pixel = Vector2::new(focal * cam.x / z + c.x, focal * cam.y / z + c.y);
            let g_pix = 2.0 * obs_weight[*id] * (pixel - observed);
            g_focal += g_pix.x * cam.x / z + g_pix.y * cam.y / z;
            g_cam.x = g_pix.x * focal / z;
            g_cam.y = g_pix.y * focal / z;
            g_cam.z = -focal * (g_pix.x * cam.x + g_pix.y * cam.y) / (z * z);
        }

        match config.depth_reg {
            DepthRegMode::Penalty => {
                if z < 0.0 {
                    g_cam.z += -1.0 / total_obs;
                }
            }
            DepthRegMode::Literal => {
                if z > 0.0 {
                    g_cam.z += -1.0 / sup.num_frames as f64;
                }
            }
        }

        g_trans += g_cam;
        g_points.push((*id, rot.transpose() * g_cam));
        g_rot += g_cam * p.transpose();
    }

    FrameGrad {
        quat: quat_backward(quat, &g_rot),
        trans: g_trans,
        focal: g_focal,
        points: g_points,
    }
}

/// Backpropagate `dL/dR` through the unit-quaternion rotation formula and
/// the normalization `u = q / ||q||`.
fn quat_backward(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let norm = q.norm();
    let u = q / norm;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);

    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let g_unit = Vector4::new(dw, dx, dy, dz);

    (g_unit - u * u.dot(&g_unit)) / norm
}

fn mask_inactive(grads: &mut Gradients, active: ActiveBlocks) {
    if !active.points {
        grads.points.iter_mut().for_each(|g| *g = Vector3::zeros());
    }
    if !active.focal {
        grads.focal = 0.0;
    }
    if !active.quats {
        grads.quats.iter_mut().for_each(|g| *g = Vector4::zeros());
    }
    if !active.trans {
        grads.trans.iter_mut().for_each(|g| *g = Vector3::zeros());
    }
    if !active.raw {
        grads.raw.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn check_finite(grads: &Gradients) -> Result<(), OptimError> {
    for (i, g) in grads.points.iter().enumerate() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { block: "points", index: i });
        }
    }
    if !grads.focal.is_finite() {
        return Err(OptimError::NonFiniteGradient { block: "focal", index: 0 });
    }
    for (i, g) in grads.quats.iter().enumerate() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { block: "quats", index: i });
        }
    }
    for (i, g) in grads.trans.iter().enumerate() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { block: "trans", index: i });
        }
    }
    for (i, g) in grads.raw.iter().enumerate() {
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { block: "raw", index: i });
        }
    }
    Ok(())
}
