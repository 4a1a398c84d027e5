//! Adam steps with per-block learning rates and the two-stage schedule.

use std::fmt::Write as _;


use crate::filters::SupervisionSet;
use crate::geometry::UncertaintySet;

use super::gradients::{gradients, Gradients};
use super::loss::{acp_error, total_loss};
use super::{ActiveBlocks, LossReport, OptimError, OptimizerConfig, ParameterState};

/// First and second Adam moment estimates plus per-block step counts for
/// bias correction. A block whose gradient is identically zero (frozen or
/// never active yet) keeps its moments and step count untouched, so a block
/// released mid-run warms up with a correct bias correction of its own.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m: Gradients,
    pub v: Gradients,
    steps: BlockSteps,
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockSteps {
    points: i32,
    focal: i32,
    quats: i32,
    trans: i32,
    raw: i32,
}

impl AdamMoments {
    pub fn zeros(num_points: usize, num_frames: usize) -> Self {
        Self {
            m: Gradients::zeros(num_points, num_frames),
            v: Gradients::zeros(num_points, num_frames),
            steps: BlockSteps::default(),
        }
    }
}

/// One iteration of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: u8,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub state: ParameterState,
    pub trace: Vec<TraceRow>,
}

impl OptimizeResult {
    pub fn final_report(&self) -> &LossReport {
        &self
            .trace
            .last()
            .expect("trace always holds the final evaluation")
            .report
    }
}

#[inline]
fn adam_update(param: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c: &OptimizerConfig, t: i32) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let m_hat = *m / (1.0 - c.beta1.powi(t));
    let v_hat = *v / (1.0 - c.beta2.powi(t));
    *param -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
}

/// Standard bias-corrected Adam with per-block learning rates. Blocks whose
/// gradient is identically zero are skipped; active blocks advance their own
/// bias-correction step count, so `iter` only orders the trace.
pub fn adam_step(
    state: &mut ParameterState,
    grads: &Gradients,
    moments: &mut AdamMoments,
    config: &OptimizerConfig,
    _iter: usize,
) {
    if grads.points.iter().any(|g| *g != nalgebra::Vector3::zeros()) {
        moments.steps.points += 1;
        let t = moments.steps.points;
        for (i, p) in state.points.points.iter_mut().enumerate() {
            for k in 0..3 {
                adam_update(
                    &mut p[k],
                    grads.points[i][k],
                    &mut moments.m.points[i][k],
                    &mut moments.v.points[i][k],
                    config.lr_points,
                    config,
                    t,
                );
            }
        }
    }
    if grads.focal != 0.0 {
        moments.steps.focal += 1;
        adam_update(
            &mut state.focal.0,
            grads.focal,
            &mut moments.m.focal,
            &mut moments.v.focal,
            config.lr_focal,
            config,
            moments.steps.focal,
        );
    }
    if grads.quats.iter().any(|g| *g != nalgebra::Vector4::zeros()) {
        moments.steps.quats += 1;
        let t = moments.steps.quats;
        for (i, q) in state.poses.quats.iter_mut().enumerate() {
            for k in 0..4 {
                adam_update(
                    &mut q[k],
                    grads.quats[i][k],
                    &mut moments.m.quats[i][k],
                    &mut moments.v.quats[i][k],
                    config.lr_quats,
                    config,
                    t,
                );
            }
        }
    }
    if grads.trans.iter().any(|g| *g != nalgebra::Vector3::zeros()) {
        moments.steps.trans += 1;
        let t = moments.steps.trans;
        for (i, tr) in state.poses.trans.iter_mut().enumerate() {
            for k in 0..3 {
                adam_update(
                    &mut tr[k],
                    grads.trans[i][k],
                    &mut moments.m.trans[i][k],
                    &mut moments.v.trans[i][k],
                    config.lr_trans,
                    config,
                    t,
                );
            }
        }
    }
    if grads.raw.iter().any(|g| *g != 0.0) {
        moments.steps.raw += 1;
        let t = moments.steps.raw;
        for (i, r) in state.uncertainty.raw.iter_mut().enumerate() {
            adam_update(
                r,
                grads.raw[i],
                &mut moments.m.raw[i],
                &mut moments.v.raw[i],
                config.lr_raw,
                config,
                t,
            );
        }
    }
}

/// Run `iters` Adam steps on the given blocks. The trace holds one row per
/// step (loss and gradient norms at the pre-step state) plus a final row
/// evaluated at the returned state.
pub fn optimize_blocks(
    init: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    iters: usize,
    active: ActiveBlocks,
) -> Result<OptimizeResult, OptimError> {
    let mut state = init.clone();
    let mut trace = Vec::with_capacity(iters + 1);
    let mut moments = AdamMoments::zeros(state.points.len(), state.poses.len());
    run_stage(&mut state, sup, config, iters, active, 1, 0, &mut moments, &mut trace)?;
    push_final(&mut trace, &state, sup, config, active, 1, iters)?;
    Ok(OptimizeResult { state, trace })
}

/// All five blocks free from iteration 0 (the single-stage ablation).
pub fn optimize_single_stage(
    init: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    iters: usize,
) -> Result<OptimizeResult, OptimError> {
    optimize_blocks(init, sup, config, iters, ActiveBlocks::all())
}

/// The two-stage schedule: stage 1 fixes `raw = 1` and optimizes points,
/// focal and poses for `stage1_iters` steps; then `raw` is re-initialized to
/// the per-trajectory errors at the stage-1 endpoint and stage 2 optimizes
/// all five blocks for `stage2_iters` steps. Adam moments persist across the
/// stage boundary; the raw block starts its own bias-correction count when
/// it activates.
pub fn optimize_two_stage(
    init: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
) -> Result<OptimizeResult, OptimError> {
    init.check_shapes(sup)?;
    let mut state = init.clone();
    let mut trace = Vec::with_capacity(config.stage1_iters + config.stage2_iters + 1);

    state.uncertainty = UncertaintySet::constant(1.0, state.uncertainty.len());
    let mut moments = AdamMoments::zeros(state.points.len(), state.poses.len());
    run_stage(
        &mut state,
        sup,
        config,
        config.stage1_iters,
        ActiveBlocks::stage1(),
        1,
        0,
        &mut moments,
        &mut trace,
    )?;

    state.uncertainty = UncertaintySet { raw: acp_error(&state, sup)? };
    run_stage(
        &mut state,
        sup,
        config,
        config.stage2_iters,
        ActiveBlocks::all(),
        2,
        config.stage1_iters,
        &mut moments,
        &mut trace,
    )?;

    push_final(
        &mut trace,
        &state,
        sup,
        config,
        ActiveBlocks::all(),
        2,
        config.stage1_iters + config.stage2_iters,
    )?;
    Ok(OptimizeResult { state, trace })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    state: &mut ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    iters: usize,
    active: ActiveBlocks,
    stage: u8,
    iter_offset: usize,
    moments: &mut AdamMoments,
    trace: &mut Vec<TraceRow>,
) -> Result<(), OptimError> {
    for i in 0..iters {
        let grads = gradients(state, sup, config, active)?;
        let mut report = total_loss(state, sup, config)?;
        report.grad_norms = Some(grads.norms());
        let iter = iter_offset + i;
        if !report.total.is_finite() {
            let mut partial = trace.clone();
            partial.push(TraceRow { iter, stage, report });
            return Err(OptimError::NonFiniteLoss { iter, trace: partial });
        }
        trace.push(TraceRow { iter, stage, report });
        adam_step(state, &grads, moments, config, i);
    }
    Ok(())
}

fn push_final(
    trace: &mut Vec<TraceRow>,
    state: &ParameterState,
    sup: &SupervisionSet,
    config: &OptimizerConfig,
    active: ActiveBlocks,
    stage: u8,
    iter: usize,
) -> Result<(), OptimError> {
    let grads = gradients(state, sup, config, active)?;
    let mut report = total_loss(state, sup, config)?;
    report.grad_norms = Some(grads.norms());
    if !report.total.is_finite() {
        let mut partial = trace.clone();
        partial.push(TraceRow { iter, stage, report });
        return Err(OptimError::NonFiniteLoss { iter, trace: partial });
    }
    trace.push(TraceRow { iter, stage, report });
    Ok(())
}

/// CSV trace with one row per iteration:
/// `iter,stage,cauchy,depth_reg,total,grad_norm_points,grad_norm_f,grad_norm_Q,grad_norm_t,grad_norm_raw`.
pub fn write_trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(
        "iter,stage,cauchy,depth_reg,total,grad_norm_points,grad_norm_f,grad_norm_Q,grad_norm_t,grad_norm_raw\n",
    );
    for row in trace {
        let n = row.report.grad_norms.unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            row.iter,
            row.stage,
            row.report.cauchy,
            row.report.depth_reg,
            row.report.total,
            n.points,
            n.focal,
            n.quats,
            n.trans,
            n.raw
        );
    }
    s
}
