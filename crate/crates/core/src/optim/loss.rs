//! Loss terms: per-observation squared reprojection errors, their
//! per-trajectory averages, the heavy-tailed uncertainty loss and the depth
//! regularizer.

use rayon::prelude::*;

use crate::filters::SupervisionSet;
use crate::geometry::{project, softplus, UncertaintySet};

use super::{AcpPower, DepthRegMode, LossKind, LossReport, OptimError, OptimizerConfig, ParameterState};

/// Scales are floored here inside the log so a zero-error trajectory with
/// `raw -> -inf` cannot drive the loss to `-inf`.
pub const GAMMA_FLOOR: f64 = 1e-8;

/// Per-observation squared pixel errors, frame-major `[frame * B + slot]`.
/// Observations whose projection is invalid (`|z| <= EPS_DIV`) contribute 0
/// and are counted in `invalid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub invalid: usize,
}

impl Residuals {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Squared Euclidean distance between each projected calibration point and
/// its tracked pixel.
pub fn residuals(state: &ParameterState, sup: &SupervisionSet) -> Result<Residuals, OptimError> {
    state.check_shapes(sup)?;
    let per_frame: Vec<(Vec<f64>, usize)> = (0..sup.num_frames)
        .into_par_iter()
        .map(|f| frame_residuals(state, sup, f))
        .collect();
    let mut values = Vec::with_capacity(sup.num_frames * sup.budget);
    let mut invalid = 0;
    for (vals, inv) in per_frame {
        values.extend(vals);
        invalid += inv;
    }
    Ok(Residuals { values, invalid })
}

fn frame_residuals(state: &ParameterState, sup: &SupervisionSet, f: usize) -> (Vec<f64>, usize) {
    let entries = &sup.frames[f];
    let pts: Vec<_> = entries.iter().map(|(_, id)| state.points.points[*id]).collect();
    let proj = project(
        &pts,
        &state.poses.quats[f],
        &state.poses.trans[f],
        state.focal.value(),
        sup.dims,
    )
    .expect("optimization states keep quaternions non-degenerate");
    let mut values = Vec::with_capacity(entries.len());
    let mut invalid = 0;
    for (slot, (observed, _)) in entries.iter().enumerate() {
        if proj.is_valid(slot) {
            values.push((proj.pixels[slot] - observed).norm_squared());
        } else {
            values.push(0.0);
            invalid += 1;
        }
    }
    (values, invalid)
}

/// Average cumulative projection error: for each trajectory, the mean of its
/// squared reprojection errors over every frame where it is observed.
pub fn acp_error(state: &ParameterState, sup: &SupervisionSet) -> Result<Vec<f64>, OptimError> {
    let res = residuals(state, sup)?;
    acp_from_residuals(&res, sup)
}

pub(super) fn acp_from_residuals(
    res: &Residuals,
    sup: &SupervisionSet,
) -> Result<Vec<f64>, OptimError> {
    let h = sup.num_trajectories();
    let mut sums = vec![0.0f64; h];
    let mut counts = vec![0usize; h];
    for (f, entries) in sup.frames.iter().enumerate() {
        for (slot, (_, id)) in entries.iter().enumerate() {
            sums[*id] += res.values[f * sup.budget + slot];
            counts[*id] += 1;
        }
    }
    for (id, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(OptimError::EmptyTrajectory(id));
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

/// Heavy-tailed negative log-likelihood
/// `(1/H) * sum_h log(gamma_h + a_h / gamma_h)` with `gamma = softplus(raw)`
/// floored at [`GAMMA_FLOOR`]; `a` is the squared (default) or raw
/// per-trajectory error.
pub fn cauchy_loss(acp: &[f64], raw: &UncertaintySet, power: AcpPower) -> f64 {
    assert_eq!(acp.len(), raw.len(), "one uncertainty per trajectory");
    let h = acp.len();
    if h == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (e, r) in acp.iter().zip(&raw.raw) {
        let gamma = softplus(*r).max(GAMMA_FLOOR);
        let a = match power {
            AcpPower::Squared => e * e,
            AcpPower::Unsquared => *e,
        };
        sum += (gamma + a / gamma).ln();
    }
    sum / h as f64
}

/// Depth regularizer over every observation's camera-frame depth.
pub fn depth_regularizer(
    state: &ParameterState,
    sup: &SupervisionSet,
    mode: DepthRegMode,
) -> Result<f64, OptimError> {
    state.check_shapes(sup)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in 0..sup.num_frames {
        let entries = &sup.frames[f];
        let pts: Vec<_> = entries.iter().map(|(_, id)| state.points.points[*id]).collect();
        let proj = project(
            &pts,
            &state.poses.quats[f],
            &state.poses.trans[f],
            state.focal.value(),
            sup.dims,
        )
        .expect("optimization states keep quaternions non-degenerate");
        for &z in &proj.depths {
            match mode {
                DepthRegMode::Literal => sum += -z.max(0.0),
                DepthRegMode::Penalty => sum += (-z).max(0.0),
            }
            count += 1;
        }
    }
    Ok(match mode {
        DepthRegMode::Literal => sum / sup.num_frames as f64,
        DepthRegMode::Penalty => {
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
    })
}

/// Composed loss: the data term plus the depth regularizer.
pub fn total_loss(
    state: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
) -> Result<LossReport, OptimError> {
    let res = residuals(state, sup)?;
    let acp = acp_from_residuals(&res, sup)?;
    let data = match config.loss {
        LossKind::Cauchy => cauchy_loss(&acp, &state.uncertainty, config.acp_power),
        LossKind::MeanSquared => res.sum() / res.values.len() as f64,
    };
    let depth_reg = depth_regularizer(state, sup, config.depth_reg)?;
    Ok(LossReport {
        cauchy: data,
        depth_reg,
        total: data + depth_reg,
        acp,
        grad_norms: None,
    })
}
