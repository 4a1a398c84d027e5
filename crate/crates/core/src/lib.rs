//! Camera parameter optimization from monocular point tracks in dynamic scenes.
//!
//! The pipeline turns a raw set of 2D point trajectories into per-frame camera
//! poses, a shared focal length, sparse 3D calibration points and per-point
//! outlier uncertainties:
//!
//! 1. [`filters`] distills a [`tracking::TrackSet`] into a per-frame budgeted
//!    [`filters::SupervisionSet`] via patch-wise texture/gradient/visibility/
//!    distribution filtering and a re-seeding loop.
//! 2. [`optim`] jointly optimizes calibration points, focal, quaternions,
//!    translations and uncertainty scales under a Cauchy reprojection loss
//!    with a two-stage schedule.
//! 3. [`eval`] aligns trajectories and computes ATE / RPE metrics.
//! 4. [`synth`] generates deterministic synthetic scenes that act as the
//!    ground-truth oracle for all of the above.

pub mod eval;
pub mod filters;
pub mod frame;
pub mod geometry;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tracking;

pub use frame::GrayFrame;
pub use geometry::{
    CalibrationPointSet, FocalLength, FrameDims, PoseSet, ProjectionResult, UncertaintySet,
};
