//! Deterministic synthetic dynamic scenes: ground-truth cameras, static
//! points, moving outlier points, rendered frames, and a ground-truth-backed
//! tracker. The whole scene is a pure function of its config, so fixed seeds
//! give bit-identical artifacts across runs and thread counts.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::frame::GrayFrame;
use crate::geometry::{project, rotation_to_quat, FrameDims, PoseSet, EPS_DIV};
use crate::rng;
use crate::tracking::{
    in_frame, sanitize, TrackError, TrackQuery, TrackSet, Tracker, Trajectory,
};

/// Counter-based RNG stream ids (see [`crate::rng`]).
const STREAM_STATIC: u64 = 0;
const STREAM_MOVING: u64 = 1;
const STREAM_MOTION: u64 = 2;
const STREAM_TRACK_NOISE: u64 = 3;
const STREAM_RENDER: u64 = 4;

/// Rendering constants: blob amplitude/width versus background noise are
/// chosen so a blob patch's variance dominates any noise-only patch.
const BLOB_AMP: f64 = 0.85;
const BLOB_SIGMA: f64 = 1.3;
const BLOB_RADIUS: i64 = 4;
const BACKGROUND_AMP: f64 = 0.05;

/// Snap radius for matching query seeds to scene points, in pixels.
pub const SEED_SNAP_RADIUS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scene config: {0}")]
    InfeasibleConfig(String),
    #[error("scene config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraPath {
    /// Circle of `radius` about the origin at constant height, sweeping
    /// `span` radians, always looking at the origin.
    Orbit { radius: f64, span: f64 },
    /// Like `Orbit` but with a sinusoidal height bob, i.e. a tilted arc.
    Arc { radius: f64, span: f64 },
    /// Straight lateral travel of length `span` at standoff `radius`,
    /// looking at the origin.
    Linear { radius: f64, span: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionModel {
    /// Constant-velocity drift of total travel `2 * amplitude`.
    Linear { amplitude: f64 },
    /// One sinusoidal oscillation of the given amplitude.
    Sinusoidal { amplitude: f64 },
}

/// `point` is invisible on the inclusive frame interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub point: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_frames: usize,
    pub n_static: usize,
    pub n_moving: usize,
    pub camera_path: CameraPath,
    pub motion_model: MotionModel,
    pub pixel_noise_sigma: f64,
    pub occlusions: Vec<Occlusion>,
    pub dims: FrameDims,
    pub focal_gt: f64,
    /// Half-extent of the box the points are drawn from.
    pub point_extent: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_frames: 30,
            n_static: 120,
            n_moving: 0,
            camera_path: CameraPath::Orbit { radius: 5.0, span: 0.8 },
            motion_model: MotionModel::Linear { amplitude: 0.6 },
            pixel_noise_sigma: 0.0,
            occlusions: Vec::new(),
            dims: FrameDims { width: 320, height: 240 },
            focal_gt: 320.0,
            point_extent: 1.0,
            seed: 1,
        }
    }
}

/// Ground-truth scene: world-to-camera poses, 3D points and per-point
/// per-frame projections and visibility.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub dims: FrameDims,
    pub num_frames: usize,
    pub gt_poses: PoseSet,
    pub gt_focal: f64,
    pub static_points: Vec<Vector3<f64>>,
    /// Frame-major positions of the moving points: `[frame][moving_index]`.
    pub moving_points: Vec<Vec<Vector3<f64>>>,
    /// Point-major ground-truth projections: `[point][frame]`.
    pub projections: Vec<Vec<Vector2<f64>>>,
    pub depths: Vec<Vec<f64>>,
    pub visibility: Vec<Vec<bool>>,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn n_points(&self) -> usize {
        self.static_points.len() + self.moving_points.first().map_or(0, Vec::len)
    }

    pub fn n_static(&self) -> usize {
        self.static_points.len()
    }

    /// World position of point `p` at frame `f`.
    pub fn position(&self, p: usize, f: usize) -> Vector3<f64> {
        if p < self.static_points.len() {
            self.static_points[p]
        } else {
            self.moving_points[f][p - self.static_points.len()]
        }
    }

    pub fn is_moving(&self, p: usize) -> bool {
        p >= self.static_points.len()
    }
}

/// Deterministically generate a scene from its config.
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene, SynthError> {
    validate(config)?;
    let e = config.point_extent;
    let n = config.num_frames;

    let mut stat = rng::Stream::new(config.seed, STREAM_STATIC);
    let static_points: Vec<Vector3<f64>> = (0..config.n_static)
        .map(|_| {
            Vector3::new(
                stat.next_range(-e, e),
                stat.next_range(-e, e),
                stat.next_range(-e, e),
            )
        })
        .collect();

    let mut mov = rng::Stream::new(config.seed, STREAM_MOVING);
    let starts: Vec<Vector3<f64>> = (0..config.n_moving)
        .map(|_| {
            Vector3::new(
                mov.next_range(-e, e),
                mov.next_range(-e, e),
                mov.next_range(-e, e),
            )
        })
        .collect();

    let mut motion = rng::Stream::new(config.seed, STREAM_MOTION);
    let params: Vec<(Vector3<f64>, f64)> = (0..config.n_moving)
        .map(|_| {
            let dir = loop {
                let d = Vector3::new(
                    motion.next_range(-1.0, 1.0),
                    motion.next_range(-1.0, 1.0),
                    motion.next_range(-1.0, 1.0),
                );
                if d.norm() > 0.1 {
                    break d.normalize();
                }
            };
            let phase = motion.next_range(0.0, TAU);
            (dir, phase)
        })
        .collect();

    let moving_points: Vec<Vec<Vector3<f64>>> = (0..n)
        .map(|f| {
            let s = if n > 1 { f as f64 / (n - 1) as f64 } else { 0.0 };
            starts
                .iter()
                .zip(&params)
                .map(|(start, (dir, phase))| match config.motion_model {
                    MotionModel::Linear { amplitude } => start + dir * (amplitude * (2.0 * s - 1.0)),
                    MotionModel::Sinusoidal { amplitude } => {
                        start + dir * (amplitude * (TAU * s + phase).sin())
                    }
                })
                .collect()
        })
        .collect();

    let gt_poses = sample_path(config.camera_path, n);

    let n_points = config.n_static + config.n_moving;
    let mut projections = vec![vec![Vector2::zeros(); n]; n_points];
    let mut depths = vec![vec![0.0; n]; n_points];
    let mut visibility = vec![vec![false; n]; n_points];
    let mut occluded = vec![vec![false; n]; n_points];
    for occ in &config.occlusions {
        for f in occ.start..=occ.end.min(n - 1) {
            occluded[occ.point][f] = true;
        }
    }

    for f in 0..n {
        for p in 0..n_points {
            let pos = if p < config.n_static {
                static_points[p]
            } else {
                moving_points[f][p - config.n_static]
            };
            let res = project(
                &[pos],
                &gt_poses.quats[f],
                &gt_poses.trans[f],
                config.focal_gt,
                config.dims,
            )
            .expect("look-at poses are non-degenerate");
            projections[p][f] = res.pixels[0];
            depths[p][f] = res.depths[0];
            visibility[p][f] = res.depths[0] > EPS_DIV
                && in_frame(res.pixels[0], config.dims)
                && !occluded[p][f];
        }
    }

    if n_points > 0 {
        for f in 0..n {
            if !(0..n_points).any(|p| visibility[p][f]) {
                return Err(SynthError::InfeasibleConfig(format!(
                    "no point is visible at frame {f}; the camera path never sees the point box"
                )));
            }
        }
    }

    Ok(SyntheticScene {
        dims: config.dims,
        num_frames: n,
        gt_poses,
        gt_focal: config.focal_gt,
        static_points,
        moving_points,
        projections,
        depths,
        visibility,
        seed: config.seed,
    })
}

fn validate(config: &SceneConfig) -> Result<(), SynthError> {
    if config.num_frames < 2 {
        return Err(SynthError::InfeasibleConfig("need at least 2 frames".into()));
    }
    if config.pixel_noise_sigma < 0.0 {
        return Err(SynthError::InfeasibleConfig("noise sigma must be >= 0".into()));
    }
    if !(config.focal_gt > 0.0) {
        return Err(SynthError::InfeasibleConfig("focal must be positive".into()));
    }
    if !(config.point_extent > 0.0) {
        return Err(SynthError::InfeasibleConfig("point extent must be positive".into()));
    }
    let n_points = config.n_static + config.n_moving;
    for occ in &config.occlusions {
        if occ.point >= n_points || occ.start > occ.end || occ.start >= config.num_frames {
            return Err(SynthError::InfeasibleConfig(format!(
                "occlusion {}:{}:{} out of range",
                occ.point, occ.start, occ.end
            )));
        }
    }
    Ok(())
}

/// World-to-camera poses along the path, looking at the origin.
fn sample_path(path: CameraPath, num_frames: usize) -> PoseSet {
    let mut quats = Vec::with_capacity(num_frames);
    let mut trans = Vec::with_capacity(num_frames);
    for i in 0..num_frames {
        let s = if num_frames > 1 { i as f64 / (num_frames - 1) as f64 } else { 0.0 };
        let center = match path {
            CameraPath::Orbit { radius, span } => {
                let theta = span * (s - 0.5);
                Vector3::new(radius * theta.sin(), 0.2 * radius, -radius * theta.cos())
            }
            CameraPath::Arc { radius, span } => {
                let theta = span * (s - 0.5);
                Vector3::new(
                    radius * theta.sin(),
                    0.2 * radius + 0.25 * radius * (PI * s).sin(),
                    -radius * theta.cos(),
                )
            }
            CameraPath::Linear { radius, span } => {
                Vector3::new(span * (s - 0.5), 0.2 * radius, -radius)
            }
        };
        let rot = look_at_origin(center);
        quats.push(rotation_to_quat(&rot));
        trans.push(-rot * center);
    }
    PoseSet { quats, trans }
}

/// World-to-camera rotation of a camera at `center` with its optical axis
/// through the origin; world +y is the up reference.
fn look_at_origin(center: Vector3<f64>) -> Matrix3<f64> {
    let forward = (-center).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let right = up.cross(&forward).normalize();
    let down = forward.cross(&right);
    Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
}

/// Ground-truth-backed tracker: seeds snap to the nearest visible scene
/// point's projection (within [`SEED_SNAP_RADIUS`]), then every frame returns
/// that point's projection plus i.i.d. Gaussian pixel noise and the
/// ground-truth visibility flag.
pub struct SyntheticTracker<'a> {
    scene: &'a SyntheticScene,
    sigma: f64,
    seed: u64,
}

impl<'a> SyntheticTracker<'a> {
    pub fn new(scene: &'a SyntheticScene, sigma: f64, seed: u64) -> Self {
        Self { scene, sigma, seed }
    }

    /// Scene point the given seed pixel snaps to at `frame`, if any.
    pub fn snap(&self, frame: usize, seed_pos: Vector2<f64>) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for p in 0..self.scene.n_points() {
            if !self.scene.visibility[p][frame] {
                continue;
            }
            let d = (self.scene.projections[p][frame] - seed_pos).norm();
            if d <= SEED_SNAP_RADIUS && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        best.map(|(_, p)| p)
    }
}

impl Tracker for SyntheticTracker<'_> {
    fn dims(&self) -> FrameDims {
        self.scene.dims
    }

    fn num_frames(&self) -> usize {
        self.scene.num_frames
    }

    fn track(&self, query: &TrackQuery) -> Result<TrackSet, TrackError> {
        let n = self.scene.num_frames;
        if query.start_frame >= n {
            return Err(TrackError::StartFrameOutOfRange { start: query.start_frame, num_frames: n });
        }
        let mut trajectories = Vec::with_capacity(query.positions.len());
        for (index, seed_pos) in query.positions.iter().enumerate() {
            let point = self.snap(query.start_frame, *seed_pos).ok_or(TrackError::UnmatchedSeed {
                index,
                x: seed_pos.x,
                y: seed_pos.y,
                radius: SEED_SNAP_RADIUS,
            })?;
            let mut positions = Vec::with_capacity(n - query.start_frame);
            let mut visibility = Vec::with_capacity(n - query.start_frame);
            for f in query.start_frame..n {
                let mut pos = self.scene.projections[point][f];
                if self.sigma > 0.0 {
                    let k = (point * n + f) as u64;
                    let (dx, dy) = rng::gaussian_pair(self.seed, STREAM_TRACK_NOISE, k);
                    pos += Vector2::new(self.sigma * dx, self.sigma * dy);
                }
                positions.push(pos);
                visibility.push(self.scene.visibility[point][f]);
            }
            let mut traj = Trajectory {
                id: index,
                start_frame: query.start_frame,
                end_frame: n - 1,
                positions,
                visibility,
            };
            sanitize(&mut traj, self.scene.dims);
            trajectories.push(traj);
        }
        Ok(TrackSet { dims: self.scene.dims, num_frames: n, trajectories })
    }
}

/// Render one grayscale frame per time step: visible points splat Gaussian
/// intensity blobs over a low-amplitude per-pixel noise background.
pub fn render_frames(scene: &SyntheticScene) -> Vec<GrayFrame> {
    let w = scene.dims.width as usize;
    let h = scene.dims.height as usize;
    (0..scene.num_frames)
        .map(|f| {
            let mut img = GrayFrame::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let k = (f * w * h + y * w + x) as u64;
                    let v = rng::uniform(scene.seed, STREAM_RENDER, k) * BACKGROUND_AMP;
                    img.set(x, y, v);
                }
            }
            for p in 0..scene.n_points() {
                if !scene.visibility[p][f] {
                    continue;
                }
                let c = scene.projections[p][f];
                let x0 = (c.x.round() as i64 - BLOB_RADIUS).max(0);
                let x1 = (c.x.round() as i64 + BLOB_RADIUS).min(w as i64 - 1);
                let y0 = (c.y.round() as i64 - BLOB_RADIUS).max(0);
                let y1 = (c.y.round() as i64 + BLOB_RADIUS).min(h as i64 - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let dx = x as f64 - c.x;
                        let dy = y as f64 - c.y;
                        let v = BLOB_AMP * (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
                        img.add(x as usize, y as usize, v);
                    }
                }
            }
            img
        })
        .collect()
}

/// Parse a `key=value` scene config file. Unknown keys are an error; the
/// `occlusion=point:start:end` key may repeat.
pub fn parse_scene_config(text: &str) -> Result<SceneConfig, SynthError> {
    let mut config = SceneConfig::default();
    let mut keys: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SynthError::Config(format!("line {}: expected key=value", i + 1)))?;
        keys.entry(key.trim()).or_default().push(value.trim());
    }

    let mut take_last = |key: &str| keys.remove(key).map(|v| v.last().unwrap().to_string());
    macro_rules! parse_num {
        ($key:expr, $field:expr) => {
            if let Some(v) = take_last($key) {
                $field = v
                    .parse()
                    .map_err(|_| SynthError::Config(format!("invalid {}: `{}`", $key, v)))?;
            }
        };
    }

    parse_num!("frames", config.num_frames);
    parse_num!("static", config.n_static);
    parse_num!("moving", config.n_moving);
    parse_num!("noise_sigma", config.pixel_noise_sigma);
    parse_num!("focal", config.focal_gt);
    parse_num!("extent", config.point_extent);
    parse_num!("seed", config.seed);

    let mut width = config.dims.width;
    let mut height = config.dims.height;
    parse_num!("width", width);
    parse_num!("height", height);
    config.dims = FrameDims::new(width, height)
        .map_err(|e| SynthError::Config(e.to_string()))?;

    let (mut radius, mut span) = match config.camera_path {
        CameraPath::Orbit { radius, span }
        | CameraPath::Arc { radius, span }
        | CameraPath::Linear { radius, span } => (radius, span),
    };
    parse_num!("radius", radius);
    parse_num!("span", span);
    let path_kind = take_last("path").unwrap_or_else(|| "orbit".into());
    config.camera_path = match path_kind.as_str() {
        "orbit" => CameraPath::Orbit { radius, span },
        "arc" => CameraPath::Arc { radius, span },
        "linear" => CameraPath::Linear { radius, span },
        other => return Err(SynthError::Config(format!("unknown path `{other}`"))),
    };

    let mut amplitude = match config.motion_model {
        MotionModel::Linear { amplitude } | MotionModel::Sinusoidal { amplitude } => amplitude,
    };
    parse_num!("amplitude", amplitude);
    let motion_kind = take_last("motion").unwrap_or_else(|| "linear".into());
    config.motion_model = match motion_kind.as_str() {
        "linear" => MotionModel::Linear { amplitude },
        "sinusoidal" => MotionModel::Sinusoidal { amplitude },
        other => return Err(SynthError::Config(format!("unknown motion `{other}`"))),
    };

    if let Some(values) = keys.remove("occlusion") {
        for v in values {
            let parts: Vec<&str> = v.split(':').collect();
            if parts.len() != 3 {
                return Err(SynthError::Config(format!(
                    "invalid occlusion `{v}`, expected point:start:end"
                )));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| SynthError::Config(format!("invalid occlusion `{v}`")))
            };
            config.occlusions.push(Occlusion {
                point: parse(parts[0])?,
                start: parse(parts[1])?,
                end: parse(parts[2])?,
            });
        }
    }

    if let Some((key, _)) = keys.iter().next() {
        return Err(SynthError::Config(format!("unknown key `{key}`")));
    }
    Ok(config)
}

/// Serialize a config in the same `key=value` format [`parse_scene_config`]
/// reads.
pub fn write_scene_config(config: &SceneConfig) -> String {
    let (path, radius, span) = match config.camera_path {
        CameraPath::Orbit { radius, span } => ("orbit", radius, span),
        CameraPath::Arc { radius, span } => ("arc", radius, span),
        CameraPath::Linear { radius, span } => ("linear", radius, span),
    };
    let (motion, amplitude) = match config.motion_model {
        MotionModel::Linear { amplitude } => ("linear", amplitude),
        MotionModel::Sinusoidal { amplitude } => ("sinusoidal", amplitude),
    };
    let mut s = String::new();
    s.push_str(&format!("frames={}\n", config.num_frames));
    s.push_str(&format!("static={}\n", config.n_static));
    s.push_str(&format!("moving={}\n", config.n_moving));
    s.push_str(&format!("path={path}\nradius={radius}\nspan={span}\n"));
    s.push_str(&format!("motion={motion}\namplitude={amplitude}\n"));
    s.push_str(&format!("noise_sigma={}\n", config.pixel_noise_sigma));
    s.push_str(&format!("width={}\nheight={}\n", config.dims.width, config.dims.height));
    s.push_str(&format!("focal={}\n", config.focal_gt));
    s.push_str(&format!("extent={}\n", config.point_extent));
    s.push_str(&format!("seed={}\n", config.seed));
    for occ in &config.occlusions {
        s.push_str(&format!("occlusion={}:{}:{}\n", occ.point, occ.start, occ.end));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SceneConfig {
        SceneConfig {
            num_frames: 10,
            n_static: 30,
            n_moving: 2,
            dims: FrameDims { width: 160, height: 120 },
            focal_gt: 160.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_scenes() {
        let config = small_config();
        let a = generate_scene(&config).unwrap();
        let b = generate_scene(&config).unwrap();
        assert_eq!(a.gt_poses, b.gt_poses);
        assert_eq!(a.static_points, b.static_points);
        assert_eq!(a.moving_points, b.moving_points);
        assert_eq!(a.projections, b.projections);
        assert_eq!(a.visibility, b.visibility);
    }

    #[test]
    fn no_moving_points_means_static_scene() {
        let config = SceneConfig { n_moving: 0, ..small_config() };
        let scene = generate_scene(&config).unwrap();
        for f in 0..scene.num_frames {
            for p in 0..scene.n_points() {
                assert_eq!(scene.position(p, f), scene.position(p, 0));
            }
        }
    }

    #[test]
    fn orbit_center_projects_to_principal_point() {
        let config = small_config();
        let scene = generate_scene(&config).unwrap();
        let c = config.dims.principal_point();
        for f in 0..scene.num_frames {
            let res = project(
                &[Vector3::zeros()],
                &scene.gt_poses.quats[f],
                &scene.gt_poses.trans[f],
                scene.gt_focal,
                scene.dims,
            )
            .unwrap();
            assert!(
                (res.pixels[0] - c).norm() <= 1.0,
                "frame {f}: {} vs {}",
                res.pixels[0],
                c
            );
        }
    }

    #[test]
    fn infeasible_scene_is_rejected() {
        // Every point occluded at frame 4: nothing is visible there.
        let mut config = small_config();
        config.n_static = 2;
        config.n_moving = 0;
        config.occlusions = (0..2).map(|p| Occlusion { point: p, start: 4, end: 4 }).collect();
        assert!(matches!(
            generate_scene(&config),
            Err(SynthError::InfeasibleConfig(_))
        ));
    }

    #[test]
    fn tracker_zero_noise_returns_exact_projections() {
        let scene = generate_scene(&small_config()).unwrap();
        let tracker = SyntheticTracker::new(&scene, 0.0, 7);
        let seeds: Vec<Vector2<f64>> = (0..scene.n_points())
            .filter(|&p| scene.visibility[p][0])
            .map(|p| scene.projections[p][0])
            .collect();
        let result = tracker.track(&TrackQuery { start_frame: 0, positions: seeds.clone() }).unwrap();
        for (traj, seed) in result.trajectories.iter().zip(&seeds) {
            let p = tracker.snap(0, *seed).unwrap();
            for f in 0..scene.num_frames {
                assert_eq!(traj.position_at(f), scene.projections[p][f]);
            }
        }
    }

    #[test]
    fn tracker_visibility_follows_occlusion_schedule() {
        let mut config = small_config();
        config.occlusions = vec![Occlusion { point: 0, start: 3, end: 6 }];
        let scene = generate_scene(&config).unwrap();
        // Point 0 must be otherwise visible so the flags isolate the schedule.
        assert!(scene.visibility[0].iter().enumerate().all(|(f, &v)| v || (3..=6).contains(&f)));
        let tracker = SyntheticTracker::new(&scene, 0.0, 7);
        let result = tracker
            .track(&TrackQuery { start_frame: 0, positions: vec![scene.projections[0][0]] })
            .unwrap();
        for f in 0..scene.num_frames {
            assert_eq!(result.trajectories[0].visible_at(f), !(3..=6).contains(&f));
        }
    }

    #[test]
    fn tracker_rejects_far_seed() {
        let scene = generate_scene(&small_config()).unwrap();
        let tracker = SyntheticTracker::new(&scene, 0.0, 7);
        // A corner pixel far from every projected point.
        let mut far = Vector2::new(0.0, 0.0);
        while tracker.snap(0, far).is_some() {
            far.x += 3.0;
        }
        let err = tracker
            .track(&TrackQuery { start_frame: 0, positions: vec![far] })
            .unwrap_err();
        assert!(matches!(err, TrackError::UnmatchedSeed { .. }));
    }

    #[test]
    fn tracker_noise_has_requested_scale() {
        let config = SceneConfig {
            num_frames: 50,
            n_static: 100,
            n_moving: 0,
            dims: FrameDims { width: 640, height: 480 },
            focal_gt: 500.0,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&config).unwrap();
        let tracker = SyntheticTracker::new(&scene, 0.5, 99);
        let seeds: Vec<Vector2<f64>> = (0..scene.n_points())
            .filter(|&p| scene.visibility[p][0])
            .map(|p| scene.projections[p][0])
            .collect();
        let result = tracker.track(&TrackQuery { start_frame: 0, positions: seeds.clone() }).unwrap();
        let mut diffs = Vec::new();
        for (traj, seed) in result.trajectories.iter().zip(&seeds) {
            let p = tracker.snap(0, *seed).unwrap();
            for f in 0..scene.num_frames {
                let d = traj.position_at(f) - scene.projections[p][f];
                diffs.push(d.x);
                diffs.push(d.y);
            }
        }
        assert!(diffs.len() >= 10_000, "need at least 1e4 samples, got {}", diffs.len());
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!((0.45..=0.55).contains(&std), "std {std}");
    }

    #[test]
    fn rendered_blobs_are_local_maxima() {
        let scene = generate_scene(&small_config()).unwrap();
        let frames = render_frames(&scene);
        let img = &frames[0];
        let mut checked = 0;
        'points: for p in 0..scene.n_points() {
            if !scene.visibility[p][0] {
                continue;
            }
            let c = scene.projections[p][0];
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            if cx < 2 || cy < 2 || cx >= img.width() as i64 - 2 || cy >= img.height() as i64 - 2 {
                continue;
            }
            // A projection near a pixel boundary leaves the maximum up to the
            // background noise; only assert on cleanly centered blobs.
            if (c.x - cx as f64).abs() > 0.25 || (c.y - cy as f64).abs() > 0.25 {
                continue;
            }
            // Skip points with a close neighbour; overlapping blobs can
            // legitimately shift the maximum.
            for q in 0..scene.n_points() {
                if q != p
                    && scene.visibility[q][0]
                    && (scene.projections[q][0] - c).norm() < 3.0 * BLOB_SIGMA
                {
                    continue 'points;
                }
            }
            let center = img.get(cx as usize, cy as usize);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let v = img.get((cx + dx) as usize, (cy + dy) as usize);
                    assert!(center >= v, "point {p}: center {center} < neighbour {v}");
                }
            }
            checked += 1;
        }
        assert!(checked >= 3, "too few isolated blobs checked: {checked}");
    }

    #[test]
    fn scene_config_round_trip() {
        let mut config = small_config();
        config.occlusions = vec![Occlusion { point: 2, start: 1, end: 4 }];
        config.pixel_noise_sigma = 0.25;
        let text = write_scene_config(&config);
        let parsed = parse_scene_config(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn scene_config_rejects_unknown_key() {
        let err = parse_scene_config("frames=10\nbogus=1\n").unwrap_err();
        assert!(matches!(err, SynthError::Config(_)));
    }
}
