//! Outlier-aware joint optimization of calibration points, focal length,
//! camera poses and per-trajectory uncertainty scales.
//!
//! The data term averages each trajectory's squared reprojection errors into
//! a per-trajectory value, feeds it through a heavy-tailed negative
//! log-likelihood `log(gamma + err^2 / gamma)` with learnable scale
//! `gamma = softplus(raw)`, and adds a depth regularizer. Optimization is
//! plain Adam with per-block learning rates and a two-stage schedule: stage 1
//! freezes `raw` at 1, stage 2 re-initializes `raw` from the stage-1
//! per-trajectory errors and frees every block.

mod gradients;
mod loss;
mod optimizer;

pub use gradients::{gradients, Gradients};
pub use loss::{
    acp_error, cauchy_loss, depth_regularizer, residuals, total_loss, Residuals, GAMMA_FLOOR,
};
pub use optimizer::{
    adam_step, optimize_blocks, optimize_single_stage, optimize_two_stage, write_trace_csv,
    AdamMoments, OptimizeResult, TraceRow,
};

use nalgebra::Vector3;
use thiserror::Error;

use crate::filters::SupervisionSet;
use crate::geometry::{CalibrationPointSet, FocalLength, PoseSet, UncertaintySet};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("state has {points} points / {uncertainties} uncertainties / {poses} poses, supervision expects {expected_points} trajectories over {expected_frames} frames")]
    ShapeMismatch {
        points: usize,
        uncertainties: usize,
        poses: usize,
        expected_points: usize,
        expected_frames: usize,
    },
    #[error("trajectory {0} has no observations")]
    EmptyTrajectory(usize),
    #[error("non-finite gradient in block `{block}` at index {index}")]
    NonFiniteGradient { block: &'static str, index: usize },
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize, trace: Vec<TraceRow> },
}

/// Depth regularizer variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthRegMode {
    /// `(1/N) * sum(-relu(z))`: rewards positive depth linearly and is
    /// unbounded below as depths grow.
    Literal,
    /// `(1/(N*B)) * sum(relu(-z))`: zero iff every depth is non-negative.
    #[default]
    Penalty,
}

/// Whether the per-trajectory error enters the heavy-tailed term squared
/// (the default) or as-is. The error is itself a mean of squared pixel
/// norms, so the squared form is effectively a fourth power of pixel error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcpPower {
    #[default]
    Squared,
    Unsquared,
}

/// Data-term choice: the uncertainty-weighted heavy-tailed loss, or a plain
/// mean squared projection error used by ablations (uncertainties frozen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Cauchy,
    MeanSquared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr_quats: f64,
    pub lr_trans: f64,
    pub lr_focal: f64,
    pub lr_points: f64,
    pub lr_raw: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub depth_reg: DepthRegMode,
    pub acp_power: AcpPower,
    pub loss: LossKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_quats: 0.01,
            lr_trans: 0.01,
            lr_focal: 1.0,
            lr_points: 0.01,
            lr_raw: 0.01,
            stage1_iters: 200,
            stage2_iters: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            depth_reg: DepthRegMode::Penalty,
            acp_power: AcpPower::Squared,
            loss: LossKind::Cauchy,
        }
    }
}

/// Which parameter blocks receive gradient; inactive blocks get exact zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBlocks {
    pub points: bool,
    pub focal: bool,
    pub quats: bool,
    pub trans: bool,
    pub raw: bool,
}

impl ActiveBlocks {
    pub fn all() -> Self {
        Self { points: true, focal: true, quats: true, trans: true, raw: true }
    }

    /// Stage 1 freezes the raw uncertainties.
    pub fn stage1() -> Self {
        Self { raw: false, ..Self::all() }
    }

    pub fn only_raw() -> Self {
        Self { points: false, focal: false, quats: false, trans: false, raw: true }
    }
}

/// The five jointly optimized blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub points: CalibrationPointSet,
    pub focal: FocalLength,
    pub poses: PoseSet,
    pub uncertainty: UncertaintySet,
}

impl ParameterState {
    /// Warm start: identity rotations, zero translations, focal at
    /// `0.7 * max(W, H)`, each point unprojected from its first observed
    /// pixel at depth 1 through the initial camera, raw uncertainties at 1.
    pub fn initialize(sup: &SupervisionSet) -> Self {
        let h = sup.num_trajectories();
        let f0 = 0.7 * sup.dims.width.max(sup.dims.height) as f64;
        let c = sup.dims.principal_point();
        let points = (0..h)
            .map(|id| {
                let px = sup
                    .first_observation(id)
                    .expect("every trajectory in a final supervision set is observed");
                Vector3::new((px.x - c.x) / f0, (px.y - c.y) / f0, 1.0)
            })
            .collect();
        Self {
            points: CalibrationPointSet { points },
            focal: FocalLength(f0),
            poses: PoseSet::identity(sup.num_frames),
            uncertainty: UncertaintySet::constant(1.0, h),
        }
    }

    pub fn check_shapes(&self, sup: &SupervisionSet) -> Result<(), OptimError> {
        let h = sup.num_trajectories();
        let n = sup.num_frames;
        if self.points.len() != h || self.uncertainty.len() != h || self.poses.len() != n {
            return Err(OptimError::ShapeMismatch {
                points: self.points.len(),
                uncertainties: self.uncertainty.len(),
                poses: self.poses.len(),
                expected_points: h,
                expected_frames: n,
            });
        }
        Ok(())
    }
}

/// Per-block L2 gradient norms, reported in the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockNorms {
    pub points: f64,
    pub focal: f64,
    pub quats: f64,
    pub trans: f64,
    pub raw: f64,
}

/// Loss breakdown at one state. `total = cauchy + depth_reg` exactly;
/// under [`LossKind::MeanSquared`] the `cauchy` slot carries the mean
/// squared error data term instead.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub cauchy: f64,
    pub depth_reg: f64,
    pub total: f64,
    pub acp: Vec<f64>,
    pub grad_norms: Option<BlockNorms>,
}
