//! Tracker abstraction consumed by the filters: given query points, a backend
//! returns per-frame 2D positions and visibility flags.
//!
//! Neural trackers are consumed only through exported track files; the file
//! backend replays them, and [`crate::synth`] provides a ground-truth backend.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::FrameDims;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("no stored track for seed {index} at frame {frame} near ({x}, {y})")]
    BackendFailure { index: usize, frame: usize, x: f64, y: f64 },
    #[error("seed {index} at ({x}, {y}) does not match any scene point within {radius} px")]
    UnmatchedSeed { index: usize, x: f64, y: f64, radius: f64 },
    #[error("query start frame {start} out of range 0..{num_frames}")]
    StartFrameOutOfRange { start: usize, num_frames: usize },
    #[error("track file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Points to start tracking at a given frame.
#[derive(Debug, Clone)]
pub struct TrackQuery {
    pub start_frame: usize,
    pub positions: Vec<Vector2<f64>>,
}

/// One tracked point over an inclusive frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub positions: Vec<Vector2<f64>>,
    pub visibility: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame <= self.end_frame
    }

    /// Position at an absolute frame index inside the range.
    pub fn position_at(&self, frame: usize) -> Vector2<f64> {
        self.positions[frame - self.start_frame]
    }

    pub fn visible_at(&self, frame: usize) -> bool {
        self.visibility[frame - self.start_frame]
    }

    pub fn all_visible(&self) -> bool {
        self.visibility.iter().all(|&v| v)
    }
}

/// A set of trajectories over a common frame range `[0, num_frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub dims: FrameDims,
    pub num_frames: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Backends are read-only after construction; concurrent `track` calls are
/// allowed.
pub trait Tracker {
    fn dims(&self) -> FrameDims;
    fn num_frames(&self) -> usize;

    /// One trajectory per query point, tracked from `query.start_frame` to
    /// the last frame, with backend-supplied visibility.
    fn track(&self, query: &TrackQuery) -> Result<TrackSet, TrackError>;
}

/// Clamp positions into `[-W, 2W] x [-H, 2H]` and mark clamped samples
/// invisible; also mark out-of-frame samples invisible. Applied by every
/// backend before returning.
pub fn sanitize(traj: &mut Trajectory, dims: FrameDims) {
    let (w, h) = (dims.width as f64, dims.height as f64);
    for (p, vis) in traj.positions.iter_mut().zip(traj.visibility.iter_mut()) {
        if p.x < -w || p.x > 2.0 * w || p.y < -h || p.y > 2.0 * h {
            p.x = p.x.clamp(-w, 2.0 * w);
            p.y = p.y.clamp(-h, 2.0 * h);
            *vis = false;
        }
        if !in_frame(*p, dims) {
            *vis = false;
        }
    }
}

/// Whether a continuous position lands on the pixel grid `[0, W-1] x [0, H-1]`.
pub fn in_frame(p: Vector2<f64>, dims: FrameDims) -> bool {
    p.x >= 0.0 && p.x <= (dims.width - 1) as f64 && p.y >= 0.0 && p.y <= (dims.height - 1) as f64
}

/// Replays trajectories loaded from a track file.
///
/// Seeds are matched by start frame plus nearest stored start position within
/// 0.5 px; unmatched seeds are a [`TrackError::BackendFailure`].
pub struct FileTracker {
    tracks: TrackSet,
}

const SEED_MATCH_RADIUS: f64 = 0.5;

impl FileTracker {
    pub fn new(tracks: TrackSet) -> Self {
        Self { tracks }
    }

    pub fn from_path(path: &Path) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(parse_track_file(&text)?))
    }
}

impl Tracker for FileTracker {
    fn dims(&self) -> FrameDims {
        self.tracks.dims
    }

    fn num_frames(&self) -> usize {
        self.tracks.num_frames
    }

    fn track(&self, query: &TrackQuery) -> Result<TrackSet, TrackError> {
        if query.start_frame >= self.tracks.num_frames {
            return Err(TrackError::StartFrameOutOfRange {
                start: query.start_frame,
                num_frames: self.tracks.num_frames,
            });
        }
        let mut out = Vec::with_capacity(query.positions.len());
        for (index, seed) in query.positions.iter().enumerate() {
            let mut best: Option<(f64, &Trajectory)> = None;
            for traj in &self.tracks.trajectories {
                if traj.start_frame != query.start_frame {
                    continue;
                }
                let d = (traj.positions[0] - seed).norm();
                if d <= SEED_MATCH_RADIUS && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, traj));
                }
            }
            let traj = best
                .map(|(_, t)| t)
                .ok_or(TrackError::BackendFailure {
                    index,
                    frame: query.start_frame,
                    x: seed.x,
                    y: seed.y,
                })?;
            let mut traj = traj.clone();
            sanitize(&mut traj, self.tracks.dims);
            out.push(traj);
        }
        Ok(TrackSet {
            dims: self.tracks.dims,
            num_frames: self.tracks.num_frames,
            trajectories: out,
        })
    }
}

/// Serialize a track set:
///
/// ```text
/// TRACKS v1 <num_frames> <width> <height>
/// <id> <start_frame> [x y v]*
/// ```
///
/// Floats use the shortest representation that round-trips exactly, so
/// write -> read -> write is byte-identical.
pub fn write_track_file(tracks: &TrackSet) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "TRACKS v1 {} {} {}",
        tracks.num_frames, tracks.dims.width, tracks.dims.height
    );
    for t in &tracks.trajectories {
        let _ = write!(s, "{} {}", t.id, t.start_frame);
        for (p, v) in t.positions.iter().zip(&t.visibility) {
            let _ = write!(s, " {} {} {}", p.x, p.y, u8::from(*v));
        }
        s.push('\n');
    }
    s
}

pub fn parse_track_file(text: &str) -> Result<TrackSet, TrackError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty track file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "TRACKS" || fields[1] != "v1" {
        return Err(parse_err(1, "expected header `TRACKS v1 <N> <W> <H>`"));
    }
    let num_frames: usize = parse_field(fields[2], 1)?;
    let width: u32 = parse_field(fields[3], 1)?;
    let height: u32 = parse_field(fields[4], 1)?;
    let dims = FrameDims::new(width, height)
        .map_err(|e| parse_err(1, &e.to_string()))?;

    let mut trajectories = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || (fields.len() - 2) % 3 != 0 {
            return Err(parse_err(lineno, "expected `id start [x y v]*`"));
        }
        let id: usize = parse_field(fields[0], lineno)?;
        let start_frame: usize = parse_field(fields[1], lineno)?;
        let samples = (fields.len() - 2) / 3;
        if samples == 0 {
            return Err(parse_err(lineno, "trajectory has no samples"));
        }
        let mut positions = Vec::with_capacity(samples);
        let mut visibility = Vec::with_capacity(samples);
        for s in 0..samples {
            let x: f64 = parse_field(fields[2 + 3 * s], lineno)?;
            let y: f64 = parse_field(fields[3 + 3 * s], lineno)?;
            let v: u8 = parse_field(fields[4 + 3 * s], lineno)?;
            positions.push(Vector2::new(x, y));
            visibility.push(v != 0);
        }
        let end_frame = start_frame + samples - 1;
        if end_frame >= num_frames {
            return Err(parse_err(lineno, "trajectory extends past the last frame"));
        }
        trajectories.push(Trajectory { id, start_frame, end_frame, positions, visibility });
    }
    Ok(TrackSet { dims, num_frames, trajectories })
}

fn parse_err(line: usize, message: &str) -> TrackError {
    TrackError::Parse { line, message: message.to_string() }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, TrackError> {
    s.parse()
        .map_err(|_| parse_err(line, &format!("invalid field `{s}`")))
}
