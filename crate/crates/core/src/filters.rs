//! Patch-wise tracking filters and the budgeted re-seeding loop that distill
//! a raw [`TrackSet`] into a [`SupervisionSet`] with exactly `B` tracked
//! points per frame, at most one per `w x w` patch.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::frame::GrayFrame;
use crate::geometry::FrameDims;
use crate::tracking::{TrackError, TrackQuery, TrackSet, Tracker, Trajectory};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("frame {width}x{height} too small for patch size {patch}")]
    FrameTooSmall { width: usize, height: usize, patch: usize },
    #[error("patch size must be at least 2, got {0}")]
    PatchTooSmall(usize),
    #[error("frame {frame} stuck at {have} of {budget} points with no seedable patch left")]
    InsufficientTexture { frame: usize, have: usize, budget: usize },
    #[error("re-seeding loop exceeded {0} iterations without filling every frame")]
    NonTermination(usize),
    #[error("tracker returned trajectories for {got} frames, expected {expected}")]
    FrameCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Tracker(#[from] TrackError),
    #[error("supervision file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Extraction hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub patch_size: usize,
    pub tau_var: f64,
    pub budget: usize,
}

impl FilterConfig {
    /// Defaults: `tau_var = 0.1`, `B = 100`, patch size 12 for frames up to
    /// 854 px wide and 24 above.
    pub fn for_dims(dims: FrameDims) -> Self {
        Self { patch_size: default_patch_size(dims), tau_var: 0.1, budget: 100 }
    }
}

pub fn default_patch_size(dims: FrameDims) -> usize {
    if dims.width <= 854 {
        12
    } else {
        24
    }
}

/// Boolean per-patch grid of `floor(H/w) x floor(W/w)` cells; the residual
/// right/bottom strips of frames not divisible by `w` carry no patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    cells: Vec<bool>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, cells: vec![false; rows * cols] }
    }

    pub fn for_frame(dims: FrameDims, patch: usize) -> Self {
        Self::new(dims.height as usize / patch, dims.width as usize / patch)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.cols + col] = v;
    }

    /// Patch containing a continuous pixel position, if inside the grid.
    pub fn patch_of(&self, pos: Vector2<f64>, patch: usize) -> Option<(usize, usize)> {
        if pos.x < 0.0 || pos.y < 0.0 {
            return None;
        }
        let col = (pos.x / patch as f64) as usize;
        let row = (pos.y / patch as f64) as usize;
        (row < self.rows && col < self.cols).then_some((row, col))
    }
}

/// Per-patch texture decision: marked iff the patch intensity variance
/// exceeds `tau_var` times the maximum patch variance of the frame.
#[derive(Debug, Clone)]
pub struct TextureMap {
    pub marked: PatchGrid,
    pub patch_size: usize,
    pub tau_var: f64,
}

/// Per-pixel L2 norm of the intensity gradient.
#[derive(Debug, Clone)]
pub struct GradientMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GradientMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Gradient norm at the pixel nearest to a continuous position.
    pub fn at_position(&self, pos: Vector2<f64>) -> f64 {
        let x = (pos.x.round().max(0.0) as usize).min(self.width - 1);
        let y = (pos.y.round().max(0.0) as usize).min(self.height - 1);
        self.get(x, y)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Filtered per-frame observations: exactly `budget` points with trajectory
/// indices per frame, plus per-trajectory frame ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionSet {
    pub dims: FrameDims,
    pub num_frames: usize,
    pub budget: usize,
    /// Per frame: `budget` entries of (pixel position, trajectory id).
    pub frames: Vec<Vec<(Vector2<f64>, usize)>>,
    /// Per trajectory id: inclusive (start, end) frame range.
    pub ranges: Vec<(usize, usize)>,
}

impl SupervisionSet {
    pub fn num_trajectories(&self) -> usize {
        self.ranges.len()
    }

    /// First observed pixel of a trajectory (at its start frame).
    pub fn first_observation(&self, id: usize) -> Option<Vector2<f64>> {
        let (start, _) = *self.ranges.get(id)?;
        self.frames[start]
            .iter()
            .find(|(_, i)| *i == id)
            .map(|(p, _)| *p)
    }

    /// All observations of a trajectory as `(frame, pixel)` pairs.
    pub fn observations_of(&self, id: usize) -> Vec<(usize, Vector2<f64>)> {
        let (start, end) = self.ranges[id];
        (start..=end)
            .filter_map(|f| {
                self.frames[f]
                    .iter()
                    .find(|(_, i)| *i == id)
                    .map(|(p, _)| (f, *p))
            })
            .collect()
    }
}

/// Texture filter: per-patch intensity variance thresholded at `tau_var`
/// times the frame's maximum patch variance (strict inequality, so a
/// constant frame marks nothing).
pub fn texture_map(frame: &GrayFrame, patch: usize, tau_var: f64) -> Result<TextureMap, FilterError> {
    if patch < 2 {
        return Err(FilterError::PatchTooSmall(patch));
    }
    let rows = frame.height() / patch;
    let cols = frame.width() / patch;
    if rows == 0 || cols == 0 {
        return Err(FilterError::FrameTooSmall {
            width: frame.width(),
            height: frame.height(),
            patch,
        });
    }
    let variances: Vec<f64> = (0..rows * cols)
        .map(|idx| {
            let (row, col) = (idx / cols, idx % cols);
            patch_variance(frame, col * patch, row * patch, patch)
        })
        .collect();
    let sigma_max = variances.iter().cloned().fold(0.0f64, f64::max);
    let mut marked = PatchGrid::new(rows, cols);
    for (idx, &var) in variances.iter().enumerate() {
        if var > tau_var * sigma_max {
            marked.set(idx / cols, idx % cols, true);
        }
    }
    Ok(TextureMap { marked, patch_size: patch, tau_var })
}

/// Two-pass population variance of one `w x w` patch.
fn patch_variance(frame: &GrayFrame, x0: usize, y0: usize, patch: usize) -> f64 {
    let count = (patch * patch) as f64;
    let mut sum = 0.0;
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            sum += frame.get(x, y);
        }
    }
    let mean = sum / count;
    let mut sq = 0.0;
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            let d = frame.get(x, y) - mean;
            sq += d * d;
        }
    }
    sq / count
}

/// Gradient filter input: central differences in x and y (one-sided at the
/// borders), L2 norm per pixel.
pub fn gradient_map(frame: &GrayFrame) -> Result<GradientMap, FilterError> {
    let (w, h) = (frame.width(), frame.height());
    if w < 2 || h < 2 {
        return Err(FilterError::FrameTooSmall { width: w, height: h, patch: 2 });
    }
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = if x == 0 {
                frame.get(1, y) - frame.get(0, y)
            } else if x == w - 1 {
                frame.get(w - 1, y) - frame.get(w - 2, y)
            } else {
                (frame.get(x + 1, y) - frame.get(x - 1, y)) / 2.0
            };
            let gy = if y == 0 {
                frame.get(x, 1) - frame.get(x, 0)
            } else if y == h - 1 {
                frame.get(x, h - 1) - frame.get(x, h - 2)
            } else {
                (frame.get(x, y + 1) - frame.get(x, y - 1)) / 2.0
            };
            data[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(GradientMap { width: w, height: h, data })
}

/// Pick the argmax-gradient pixel of each marked, unoccupied patch; if more
/// candidates than `limit`, keep the `limit` highest-gradient ones. Ties
/// break to the smallest row-major pixel / patch index.
pub fn select_seeds(
    texmap: &TextureMap,
    gradmap: &GradientMap,
    occupied: &PatchGrid,
    limit: usize,
) -> Vec<Vector2<f64>> {
    assert_eq!(
        (texmap.marked.rows, texmap.marked.cols),
        (occupied.rows, occupied.cols),
        "occupancy grid must match the texture grid"
    );
    let w = texmap.patch_size;
    let mut candidates: Vec<(usize, Vector2<f64>, f64)> = Vec::new();
    for row in 0..texmap.marked.rows {
        for col in 0..texmap.marked.cols {
            if !texmap.marked.get(row, col) || occupied.get(row, col) {
                continue;
            }
            let mut best_val = f64::NEG_INFINITY;
            let mut best_pos = Vector2::zeros();
            for y in row * w..(row + 1) * w {
                for x in col * w..(col + 1) * w {
                    let g = gradmap.get(x, y);
                    if g > best_val {
                        best_val = g;
                        best_pos = Vector2::new(x as f64, y as f64);
                    }
                }
            }
            candidates.push((row * texmap.marked.cols + col, best_pos, best_val));
        }
    }
    if candidates.len() > limit {
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("gradient norms are finite")
                .then(a.0.cmp(&b.0))
        });
        candidates.truncate(limit);
        candidates.sort_by_key(|c| c.0);
    }
    candidates.into_iter().map(|(_, pos, _)| pos).collect()
}

/// Visibility filter: drop every trajectory that is invisible at any frame
/// of its range.
pub fn visibility_filter(tracks: &TrackSet) -> TrackSet {
    TrackSet {
        dims: tracks.dims,
        num_frames: tracks.num_frames,
        trajectories: tracks
            .trajectories
            .iter()
            .filter(|t| t.all_visible())
            .cloned()
            .collect(),
    }
}

/// Distribution filter: frame by frame in ascending order, whenever two or
/// more live trajectories occupy the same patch, keep the one with the
/// largest gradient norm at its position in that frame (ties to the smaller
/// trajectory id) and remove the others entirely.
pub fn distribution_filter(
    tracks: &TrackSet,
    gradmaps: &[GradientMap],
    patch: usize,
) -> TrackSet {
    assert!(gradmaps.len() >= tracks.num_frames, "need a gradient map per frame");
    let grid = PatchGrid::for_frame(tracks.dims, patch);
    let n_traj = tracks.trajectories.len();
    let mut removed = vec![false; n_traj];
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); grid.rows * grid.cols];
    for f in 0..tracks.num_frames {
        let mut used: Vec<usize> = Vec::new();
        for (idx, traj) in tracks.trajectories.iter().enumerate() {
            if removed[idx] || !traj.covers(f) {
                continue;
            }
            if let Some((row, col)) = grid.patch_of(traj.position_at(f), patch) {
                let cell = row * grid.cols + col;
                if cells[cell].is_empty() {
                    used.push(cell);
                }
                cells[cell].push(idx);
            }
        }
        for &cell in &used {
            if cells[cell].len() > 1 {
                let winner = *cells[cell]
                    .iter()
                    .min_by(|&&a, &&b| {
                        let ga = gradmaps[f].at_position(tracks.trajectories[a].position_at(f));
                        let gb = gradmaps[f].at_position(tracks.trajectories[b].position_at(f));
                        gb.partial_cmp(&ga)
                            .expect("gradient norms are finite")
                            .then(tracks.trajectories[a].id.cmp(&tracks.trajectories[b].id))
                    })
                    .expect("cell is nonempty");
                for &idx in &cells[cell] {
                    if idx != winner {
                        removed[idx] = true;
                    }
                }
            }
            cells[cell].clear();
        }
    }
    TrackSet {
        dims: tracks.dims,
        num_frames: tracks.num_frames,
        trajectories: tracks
            .trajectories
            .iter()
            .enumerate()
            .filter(|(idx, _)| !removed[*idx])
            .map(|(_, t)| t.clone())
            .collect(),
    }
}

/// One seeding event of the extraction loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedEvent {
    pub frame: usize,
    pub requested: usize,
    pub seeded: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionReport {
    pub seed_events: Vec<SeedEvent>,
    pub trajectories_created: usize,
    pub trajectories_removed: usize,
}

/// Run the full extraction loop; see [`extract_supervision_with_report`].
pub fn extract_supervision(
    frames: &[GrayFrame],
    tracker: &dyn Tracker,
    config: &FilterConfig,
) -> Result<SupervisionSet, FilterError> {
    extract_supervision_with_report(frames, tracker, config).map(|(s, _)| s)
}

/// The budgeted re-seeding loop: repeatedly seed the earliest under-filled
/// frame from marked, unoccupied patches, track to the end, and apply the
/// visibility and distribution filters, until every frame holds exactly
/// `budget` points.
///
/// A patch whose seed produced a trajectory later removed by the filters is
/// not re-seeded at that frame again; without this the loop would retry the
/// identical seed forever.
pub fn extract_supervision_with_report(
    frames: &[GrayFrame],
    tracker: &dyn Tracker,
    config: &FilterConfig,
) -> Result<(SupervisionSet, ExtractionReport), FilterError> {
    let n = tracker.num_frames();
    if frames.len() != n {
        return Err(FilterError::FrameCountMismatch { got: frames.len(), expected: n });
    }
    let dims = tracker.dims();
    let patch = config.patch_size;

    let texmaps: Vec<TextureMap> = frames
        .par_iter()
        .map(|f| texture_map(f, patch, config.tau_var))
        .collect::<Result<_, _>>()?;
    let gradmaps: Vec<GradientMap> = frames
        .par_iter()
        .map(gradient_map)
        .collect::<Result<_, _>>()?;

    let mut kept: Vec<Trajectory> = Vec::new();
    // Seed provenance per trajectory id: (seed frame, patch cell).
    let mut provenance: Vec<Option<(usize, (usize, usize))>> = Vec::new();
    let mut burned: Vec<PatchGrid> = vec![PatchGrid::for_frame(dims, patch); n];
    let mut next_id = 0usize;
    let mut report = ExtractionReport::default();

    let cap = 50 * n;
    let mut iterations = 0usize;
    loop {
        let mut counts = vec![0usize; n];
        for t in &kept {
            for f in t.start_frame..=t.end_frame {
                counts[f] += 1;
            }
        }
        let Some(frame) = counts.iter().position(|&c| c < config.budget) else {
            break;
        };
        if iterations >= cap {
            return Err(FilterError::NonTermination(cap));
        }
        iterations += 1;

        let mut occupied = burned[frame].clone();
        for t in &kept {
            if t.covers(frame) {
                if let Some((row, col)) = occupied.patch_of(t.position_at(frame), patch) {
                    occupied.set(row, col, true);
                }
            }
        }
        let need = config.budget - counts[frame];
        let seeds = select_seeds(&texmaps[frame], &gradmaps[frame], &occupied, need);
        if seeds.is_empty() {
            return Err(FilterError::InsufficientTexture {
                frame,
                have: counts[frame],
                budget: config.budget,
            });
        }
        report.seed_events.push(SeedEvent { frame, requested: need, seeded: seeds.len() });

        let query = TrackQuery { start_frame: frame, positions: seeds.clone() };
        let new_tracks = match tracker.track(&query) {
            Ok(tracks) => tracks,
            // A backend may reject an individual seed (nothing trackable at
            // that pixel). Burn the offending patch for this frame and retry;
            // the iteration cap still bounds the loop.
            Err(TrackError::UnmatchedSeed { index, .. })
            | Err(TrackError::BackendFailure { index, .. }) => {
                if let Some((row, col)) = burned[frame].patch_of(seeds[index], patch) {
                    burned[frame].set(row, col, true);
                }
                report.seed_events.pop();
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut merged = TrackSet { dims, num_frames: n, trajectories: kept.clone() };
        for (traj, seed) in new_tracks.trajectories.into_iter().zip(&seeds) {
            let mut traj = traj;
            traj.id = next_id;
            next_id += 1;
            report.trajectories_created += 1;
            provenance.push(occupied.patch_of(*seed, patch).map(|cell| (frame, cell)));
            merged.trajectories.push(traj);
        }

        let filtered = distribution_filter(&visibility_filter(&merged), &gradmaps, patch);

        let mut survives = vec![false; next_id];
        for t in &filtered.trajectories {
            survives[t.id] = true;
        }
        for t in &merged.trajectories {
            if !survives[t.id] {
                report.trajectories_removed += 1;
                if let Some((f, (row, col))) = provenance[t.id] {
                    burned[f].set(row, col, true);
                }
            }
        }
        kept = filtered.trajectories;
    }

    // Final ids follow creation order.
    kept.sort_by_key(|t| t.id);
    let ranges: Vec<(usize, usize)> = kept.iter().map(|t| (t.start_frame, t.end_frame)).collect();
    let mut per_frame: Vec<Vec<(Vector2<f64>, usize)>> = vec![Vec::new(); n];
    for (new_id, traj) in kept.iter().enumerate() {
        for f in traj.start_frame..=traj.end_frame {
            per_frame[f].push((traj.position_at(f), new_id));
        }
    }
    debug_assert!(per_frame.iter().all(|v| v.len() == config.budget));

    Ok((
        SupervisionSet {
            dims,
            num_frames: n,
            budget: config.budget,
            frames: per_frame,
            ranges,
        },
        report,
    ))
}

/// Serialize a supervision set:
///
/// ```text
/// SUPERVISION v1 <N> <W> <H> <B> <Htotal>
/// <frame_idx> [x y id]*B
/// traj <id> <start> <end>
/// ```
pub fn write_supervision_file(sup: &SupervisionSet) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "SUPERVISION v1 {} {} {} {} {}",
        sup.num_frames,
        sup.dims.width,
        sup.dims.height,
        sup.budget,
        sup.num_trajectories()
    );
    for (f, entries) in sup.frames.iter().enumerate() {
        let _ = write!(s, "{f}");
        for (pos, id) in entries {
            let _ = write!(s, " {} {} {}", pos.x, pos.y, id);
        }
        s.push('\n');
    }
    for (id, (start, end)) in sup.ranges.iter().enumerate() {
        let _ = writeln!(s, "traj {id} {start} {end}");
    }
    s
}

pub fn parse_supervision_file(text: &str) -> Result<SupervisionSet, FilterError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty supervision file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "SUPERVISION" || fields[1] != "v1" {
        return Err(parse_err(1, "expected header `SUPERVISION v1 <N> <W> <H> <B> <Htotal>`"));
    }
    let num_frames: usize = parse_field(fields[2], 1)?;
    let width: u32 = parse_field(fields[3], 1)?;
    let height: u32 = parse_field(fields[4], 1)?;
    let budget: usize = parse_field(fields[5], 1)?;
    let n_traj: usize = parse_field(fields[6], 1)?;
    let dims = FrameDims::new(width, height).map_err(|e| parse_err(1, &e.to_string()))?;

    let mut frames = vec![Vec::new(); num_frames];
    let mut ranges = vec![(usize::MAX, usize::MAX); n_traj];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "traj" {
            if fields.len() != 4 {
                return Err(parse_err(lineno, "expected `traj id start end`"));
            }
            let id: usize = parse_field(fields[1], lineno)?;
            if id >= n_traj {
                return Err(parse_err(lineno, "trajectory id out of range"));
            }
            ranges[id] = (parse_field(fields[2], lineno)?, parse_field(fields[3], lineno)?);
        } else {
            if (fields.len() - 1) % 3 != 0 || (fields.len() - 1) / 3 != budget {
                return Err(parse_err(lineno, "expected `frame [x y id]*B`"));
            }
            let f: usize = parse_field(fields[0], lineno)?;
            if f >= num_frames {
                return Err(parse_err(lineno, "frame index out of range"));
            }
            let mut entries = Vec::with_capacity(budget);
            for e in 0..budget {
                let x: f64 = parse_field(fields[1 + 3 * e], lineno)?;
                let y: f64 = parse_field(fields[2 + 3 * e], lineno)?;
                let id: usize = parse_field(fields[3 + 3 * e], lineno)?;
                if id >= n_traj {
                    return Err(parse_err(lineno, "trajectory id out of range"));
                }
                entries.push((Vector2::new(x, y), id));
            }
            frames[f] = entries;
        }
    }
    if frames.iter().any(|f| f.len() != budget) {
        return Err(parse_err(0, "missing frame lines"));
    }
    if ranges.iter().any(|&(s, _)| s == usize::MAX) {
        return Err(parse_err(0, "missing traj lines"));
    }
    Ok(SupervisionSet { dims, num_frames, budget, frames, ranges })
}

fn parse_err(line: usize, message: &str) -> FilterError {
    FilterError::Parse { line, message: message.to_string() }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, FilterError> {
    s.parse().map_err(|_| parse_err(line, &format!("invalid field `{s}`")))
}
