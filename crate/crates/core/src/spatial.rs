//! Floors, rooms and the per-frame navigation log.
//!
//! Floors are modes of the camera-height histogram. Rooms come from a 2D
//! occupancy grid per floor: an exact Euclidean distance transform from the
//! walls, peaks of that transform as markers, and priority flooding from the
//! markers.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, BackendRequest, BackendResponse, FrameContext};
use crate::episode::Keyframe;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::ids::{FrameId, TrackId};
use crate::math::Vec3;

pub const UNKNOWN_ROOM: &str = "unknown";
pub const UNAVAILABLE_FOV: &str = "unavailable";

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConfig {
    /// Histogram bin for camera heights.
    pub floor_bin: f64,
    pub floor_mode_separation: f64,
    /// Occupancy cell edge.
    pub grid_cell: f64,
    pub room_peak_separation: f64,
    pub yaw_threshold_deg: f64,
    pub translation_threshold: f64,
    pub vertical_threshold: f64,
    /// Depth hits this close above the floor surface mark a cell free.
    pub floor_band: f64,
    /// Depth hits in `[wall_band_low, wall_band_high]` above the floor mark a
    /// cell as wall. Furniture stays below, door lintels above.
    pub wall_band_low: f64,
    pub wall_band_high: f64,
    /// Search radius when an object or camera sits on a wall cell.
    pub room_lookup_radius: f64,
    /// Pixel stride when sampling depth for occupancy.
    pub depth_stride: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            floor_bin: 0.1,
            floor_mode_separation: 1.5,
            grid_cell: 0.1,
            room_peak_separation: 1.0,
            yaw_threshold_deg: 10.0,
            translation_threshold: 0.1,
            vertical_threshold: 0.3,
            floor_band: 0.15,
            wall_band_low: 1.2,
            wall_band_high: 2.0,
            room_lookup_radius: 1.0,
            depth_stride: 2,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.floor_bin,
            self.floor_mode_separation,
            self.grid_cell,
            self.room_peak_separation,
            self.floor_band,
        ];
        if positive.iter().any(|x| !(*x > 0.0)) || self.depth_stride == 0 {
            return Err(Error::contract("spatial bins, separations and bands must be positive"));
        }
        if !(self.wall_band_low < self.wall_band_high) || self.wall_band_low <= self.floor_band {
            return Err(Error::contract("wall band must lie above the floor band"));
        }
        let nonneg = [
            self.yaw_threshold_deg,
            self.translation_threshold,
            self.vertical_threshold,
            self.room_lookup_radius,
        ];
        if nonneg.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::contract("motion thresholds and lookup radius must be non-negative"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- floors --

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub floor_id: u32,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FloorModel {
    pub floors: Vec<Floor>,
}

impl FloorModel {
    /// Floor containing height `z`; heights outside every interval clamp to
    /// the nearest floor.
    pub fn floor_of(&self, z: f64) -> Option<u32> {
        let first = self.floors.first()?;
        if z < first.z_min {
            return Some(first.floor_id);
        }
        self.floors
            .iter()
            .find(|f| z <= f.z_max)
            .or(self.floors.last())
            .map(|f| f.floor_id)
    }
}

/// Splits camera heights into floors at the midpoints between histogram
/// modes at least `separation` apart.
pub fn detect_floors(heights: &[f64], bin: f64, separation: f64) -> Result<FloorModel> {
    if heights.is_empty() {
        return Err(Error::contract("no camera heights"));
    }
    if !(bin > 0.0) || !(separation > 0.0) || heights.iter().any(|h| !h.is_finite()) {
        return Err(Error::contract("bin and separation must be positive, heights finite"));
    }
    let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nbins = (libm::floor((hi - lo) / bin) as usize) + 1;
    let mut counts = vec![0usize; nbins];
    for h in heights {
        let i = (libm::floor((h - lo) / bin) as usize).min(nbins - 1);
        counts[i] += 1;
    }
    let mut maxima: Vec<usize> = (0..nbins)
        .filter(|&i| {
            let left = if i > 0 { counts[i - 1] } else { 0 };
            let right = counts.get(i + 1).copied().unwrap_or(0);
            counts[i] > 0 && counts[i] >= left && counts[i] >= right
        })
        .collect();
    maxima.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let centre = |i: usize| lo + (i as f64 + 0.5) * bin;
    let mut modes: Vec<f64> = Vec::new();
    for i in maxima {
        let c = centre(i);
        if modes.iter().all(|m| libm::fabs(m - c) >= separation) {
            modes.push(c);
        }
    }
    modes.sort_by(f64::total_cmp);
    let mut floors = Vec::with_capacity(modes.len());
    for (i, _) in modes.iter().enumerate() {
        let z_min = if i == 0 { lo } else { 0.5 * (modes[i - 1] + modes[i]) };
        let z_max = if i + 1 == modes.len() { hi } else { 0.5 * (modes[i] + modes[i + 1]) };
        floors.push(Floor {
            floor_id: i as u32,
            z_min,
            z_max,
        });
    }
    Ok(FloorModel { floors })
}

// ------------------------------------------------------------- occupancy --

/// Free/wall grid in the world xy plane. Cell `(i, j)` covers
/// `[origin_x + i·cell, origin_x + (i+1)·cell) × [origin_y + j·cell, …)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` = free.
    pub free: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(origin_x: f64, origin_y: f64, cell: f64, width: usize, height: usize) -> Self {
        OccupancyGrid {
            origin_x,
            origin_y,
            cell,
            width,
            height,
            free: vec![false; width * height],
        }
    }

    /// Parses rows of `.` (free) and `#` (wall); the first row is `j = 0`.
    pub fn from_ascii(rows: &[&str], cell: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut g = OccupancyGrid::new(0.0, 0.0, cell, width, height);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::contract("ragged occupancy rows"));
            }
            for (i, c) in r.bytes().enumerate() {
                g.free[j * width + i] = match c {
                    b'.' => true,
                    b'#' => false,
                    _ => return Err(Error::contract("occupancy rows use '.' and '#'")),
                };
            }
        }
        Ok(g)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        i < self.width && j < self.height && self.free[self.index(i, j)]
    }

    pub fn set_free(&mut self, i: usize, j: usize, free: bool) {
        let k = self.index(i, j);
        self.free[k] = free;
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = libm::floor((x - self.origin_x) / self.cell);
        let j = libm::floor((y - self.origin_y) / self.cell);
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }
}

/// Builds the occupancy grid of one floor from its keyframes' depth.
///
/// Unobserved cells are free: walls are only asserted where depth actually
/// hit something in the wall band. The grid spans the observed hits plus a
/// one-cell margin.
pub fn occupancy_from_depth(frames: &[&Keyframe], cfg: &SpatialConfig) -> Result<Option<OccupancyGrid>> {
    let stride = cfg.depth_stride.max(1);
    let mut points = Vec::new();
    for f in frames {
        let d = &f.depth;
        for v in (0..d.height).step_by(stride) {
            for u in (0..d.width).step_by(stride) {
                let z = d.get(u, v) as f64;
                if z > 0.0 && z.is_finite() {
                    let c = f.intrinsics.unproject(u as f64, v as f64, z);
                    points.push(f.pose.transform(c));
                }
            }
        }
    }
    if points.is_empty() {
        return Ok(None);
    }
    let mut zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    zs.sort_by(f64::total_cmp);
    let ground = zs[(zs.len() - 1) / 100];

    let mut free_hits = Vec::new();
    let mut wall_hits = Vec::new();
    for p in &points {
        let h = p.z - ground;
        if h <= cfg.floor_band {
            free_hits.push(*p);
        } else if (cfg.wall_band_low..=cfg.wall_band_high).contains(&h) {
            wall_hits.push(*p);
        }
    }
    let all = free_hits.iter().chain(&wall_hits);
    let (mut lo, mut hi) = (Vec3::new(f64::INFINITY, f64::INFINITY, 0.0), Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0));
    let mut any = false;
    for p in all {
        lo = lo.min(*p);
        hi = hi.max(*p);
        any = true;
    }
    if !any {
        return Ok(None);
    }
    let c = cfg.grid_cell;
    let ox = (libm::floor(lo.x / c) - 1.0) * c;
    let oy = (libm::floor(lo.y / c) - 1.0) * c;
    let w = (libm::floor((hi.x - ox) / c) as usize) + 2;
    let h = (libm::floor((hi.y - oy) / c) as usize) + 2;
    let mut grid = OccupancyGrid::new(ox, oy, c, w, h);
    grid.free.iter_mut().for_each(|f| *f = true);
    for p in &wall_hits {
        if let Some((i, j)) = grid.cell_of(p.x, p.y) {
            grid.set_free(i, j, false);
        }
    }
    Ok(Some(grid))
}

// ----------------------------------------------------- distance transform --

const INF: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sq = |i: usize| (i * i) as f64;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance (in cells) from every cell to the nearest wall,
/// with everything outside the grid counting as wall.
pub fn distance_transform(grid: &OccupancyGrid) -> Vec<f64> {
    let (w, h) = (grid.width + 2, grid.height + 2);
    let mut f = vec![0.0f64; w * h];
    for j in 0..grid.height {
        for i in 0..grid.width {
            if grid.is_free(i, j) {
                f[(j + 1) * w + i + 1] = INF;
            }
        }
    }
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for i in 0..w {
        for j in 0..h {
            col[j] = f[j * w + i];
        }
        dt_1d(&col, &mut col_out);
        for j in 0..h {
            f[j * w + i] = col_out[j];
        }
    }
    let mut row_out = vec![0.0; w];
    for j in 0..h {
        dt_1d(&f[j * w..(j + 1) * w], &mut row_out);
        f[j * w..(j + 1) * w].copy_from_slice(&row_out);
    }
    let mut out = vec![0.0; grid.width * grid.height];
    for j in 0..grid.height {
        for i in 0..grid.width {
            out[grid.index(i, j)] = libm::sqrt(f[(j + 1) * w + i + 1]);
        }
    }
    out
}

// ------------------------------------------------------------------ rooms --

/// Cell-to-room assignment of one grid; room ids are `0..room_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: Vec<Option<u32>>,
    pub room_count: u32,
}

/// Watershed of the wall distance transform from its well-separated peaks.
pub fn segment_rooms(grid: &OccupancyGrid, peak_separation: f64) -> Segmentation {
    let n = grid.width * grid.height;
    let mut labels: Vec<Option<u32>> = vec![None; n];
    if grid.free_count() == 0 {
        return Segmentation { labels, room_count: 0 };
    }
    let dist = distance_transform(grid);
    let (w, h) = (grid.width as isize, grid.height as isize);
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= w || j >= h {
            0.0
        } else {
            dist[(j * w + i) as usize]
        }
    };
    let mut peaks: Vec<usize> = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let d = at(i, j);
            if d <= 0.0 {
                continue;
            }
            let is_max = (-1..=1).all(|dj| (-1..=1).all(|di| at(i + di, j + dj) <= d));
            if is_max {
                peaks.push((j * w + i) as usize);
            }
        }
    }
    peaks.sort_by(|a, b| dist[*b].total_cmp(&dist[*a]).then(a.cmp(b)));
    let sep_cells = peak_separation / grid.cell;
    let mut markers: Vec<usize> = Vec::new();
    for p in peaks {
        let (pi, pj) = ((p % grid.width) as f64, (p / grid.width) as f64);
        let far = markers.iter().all(|m| {
            let (mi, mj) = ((m % grid.width) as f64, (m / grid.width) as f64);
            libm::hypot(pi - mi, pj - mj) >= sep_cells
        });
        if far {
            markers.push(p);
        }
    }

    let mut next = 0u32;
    let mut seq = 0u64;
    // Max-heap on distance, FIFO among equal distances.
    let mut heap: BinaryHeap<(u64, Reverse<u64>, usize)> = BinaryHeap::new();
    let mut flood = |seeds: &[usize], labels: &mut Vec<Option<u32>>, next: &mut u32| {
        for &s in seeds {
            if labels[s].is_some() {
                continue;
            }
            labels[s] = Some(*next);
            *next += 1;
            heap.push((dist[s].to_bits(), Reverse(seq), s));
            seq += 1;
        }
        while let Some((_, _, c)) = heap.pop() {
            let label = labels[c];
            let (ci, cj) = ((c % grid.width) as isize, (c / grid.width) as isize);
            for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let (ni, nj) = (ci + di, cj + dj);
                if ni < 0 || nj < 0 || ni >= w || nj >= h {
                    continue;
                }
                let nb = (nj * w + ni) as usize;
                if grid.free[nb] && labels[nb].is_none() {
                    labels[nb] = label;
                    heap.push((dist[nb].to_bits(), Reverse(seq), nb));
                    seq += 1;
                }
            }
        }
    };
    flood(&markers, &mut labels, &mut next);
    // Free components whose peak was suppressed by a marker across a wall.
    for c in 0..n {
        if grid.free[c] && labels[c].is_none() {
            flood(&[c], &mut labels, &mut next);
        }
    }
    Segmentation {
        labels,
        room_count: next,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomInfo {
    pub room_id: u32,
    pub floor_id: u32,
    pub label: String,
    /// Free cells in the room.
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorLayout {
    pub floor_id: u32,
    pub grid: OccupancyGrid,
    /// Global room id per cell.
    pub rooms: Vec<Option<u32>>,
}

/// Rooms of every floor with their labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomModel {
    pub layouts: Vec<FloorLayout>,
    pub rooms: Vec<RoomInfo>,
}

impl RoomModel {
    /// Adds one floor's segmentation; labels start as `unknown`.
    pub fn add_floor(&mut self, floor_id: u32, grid: OccupancyGrid, seg: Segmentation) {
        let base = self.rooms.len() as u32;
        let mut cells = vec![0usize; seg.room_count as usize];
        for l in seg.labels.iter().flatten() {
            cells[*l as usize] += 1;
        }
        for (i, c) in cells.into_iter().enumerate() {
            self.rooms.push(RoomInfo {
                room_id: base + i as u32,
                floor_id,
                label: UNKNOWN_ROOM.to_string(),
                cells: c,
            });
        }
        let rooms = seg.labels.iter().map(|l| l.map(|l| l + base)).collect();
        self.layouts.push(FloorLayout { floor_id, grid, rooms });
    }

    pub fn room(&self, id: u32) -> Option<&RoomInfo> {
        self.rooms.iter().find(|r| r.room_id == id)
    }

    pub fn label_of(&self, id: Option<u32>) -> &str {
        id.and_then(|i| self.room(i)).map_or(UNKNOWN_ROOM, |r| r.label.as_str())
    }

    /// Room of the cell containing `(x, y)`.
    pub fn room_at(&self, floor_id: u32, x: f64, y: f64) -> Option<u32> {
        let l = self.layouts.iter().find(|l| l.floor_id == floor_id)?;
        let (i, j) = l.grid.cell_of(x, y)?;
        l.rooms[l.grid.index(i, j)]
    }

    /// Room of the nearest labelled cell within `radius` meters.
    pub fn nearest_room(&self, floor_id: u32, x: f64, y: f64, radius: f64) -> Option<u32> {
        if let Some(r) = self.room_at(floor_id, x, y) {
            return Some(r);
        }
        let l = self.layouts.iter().find(|l| l.floor_id == floor_id)?;
        let g = &l.grid;
        let fi = (x - g.origin_x) / g.cell;
        let fj = (y - g.origin_y) / g.cell;
        let r = libm::ceil(radius / g.cell) as isize;
        let (ci, cj) = (libm::floor(fi) as isize, libm::floor(fj) as isize);
        let mut best: Option<(f64, usize)> = None;
        for j in (cj - r)..=(cj + r) {
            for i in (ci - r)..=(ci + r) {
                if i < 0 || j < 0 || i >= g.width as isize || j >= g.height as isize {
                    continue;
                }
                let k = g.index(i as usize, j as usize);
                if l.rooms[k].is_none() {
                    continue;
                }
                let d = libm::hypot(i as f64 + 0.5 - fi, j as f64 + 0.5 - fj) * g.cell;
                if d <= radius && best.is_none_or(|(bd, bk)| d < bd || (d == bd && k < bk)) {
                    best = Some((d, k));
                }
            }
        }
        best.and_then(|(_, k)| l.rooms[k])
    }
}

/// Labels every room by asking the backend to score its members' captions
/// against `classes`. Rooms without members, with all-zero scores, or whose
/// request fails are labelled `unknown`.
pub fn label_rooms(
    model: &mut RoomModel,
    members: &BTreeMap<u32, Vec<String>>,
    client: &mut BackendClient,
    classes: &[String],
) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::contract("room class list is empty"));
    }
    for room in &mut model.rooms {
        room.label = UNKNOWN_ROOM.to_string();
        let Some(captions) = members.get(&room.room_id).filter(|c| !c.is_empty()) else {
            continue;
        };
        match client.call(&BackendRequest::classify(captions, classes)) {
            Ok(BackendResponse::Classify(scores)) if scores.len() == classes.len() => {
                let mut best = 0usize;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                if scores[best] > 0.0 {
                    room.label = classes[best].clone();
                }
            }
            Ok(_) => log::warn!("room {}: classify scores do not match the class list", room.room_id),
            Err(e) => log::warn!("room {}: classify failed: {e}", room.room_id),
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- motion --

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionLabel {
    Stationary,
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
    Ascend,
    Descend,
}

impl MotionLabel {
    pub const ALL: [MotionLabel; 7] = [
        MotionLabel::Stationary,
        MotionLabel::Forward,
        MotionLabel::Backward,
        MotionLabel::TurnLeft,
        MotionLabel::TurnRight,
        MotionLabel::Ascend,
        MotionLabel::Descend,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MotionLabel::Stationary => "stationary",
            MotionLabel::Forward => "forward",
            MotionLabel::Backward => "backward",
            MotionLabel::TurnLeft => "turn_left",
            MotionLabel::TurnRight => "turn_right",
            MotionLabel::Ascend => "ascend",
            MotionLabel::Descend => "descend",
        }
    }

    pub fn parse(s: &str) -> Option<MotionLabel> {
        MotionLabel::ALL.into_iter().find(|m| m.label() == s)
    }
}

/// Yaw of `curr` relative to `prev` in radians, positive to the left.
pub fn relative_yaw(prev: &Pose, curr: &Pose) -> f64 {
    let rel = prev.rotation.transpose().mul_mat(&curr.rotation);
    let f = rel.mul_vec(Vec3::new(0.0, 0.0, 1.0));
    libm::atan2(-f.x, f.z)
}

/// Egocentric motion between consecutive keyframes. Turns take precedence
/// over forward/backward motion, which takes precedence over vertical
/// motion.
pub fn motion_label(prev: &Pose, curr: &Pose, cfg: &SpatialConfig) -> MotionLabel {
    let yaw = relative_yaw(prev, curr);
    if libm::fabs(yaw) > cfg.yaw_threshold_deg.to_radians() {
        return if yaw > 0.0 {
            MotionLabel::TurnLeft
        } else {
            MotionLabel::TurnRight
        };
    }
    let delta = curr.translation - prev.translation;
    let local = prev.rotation.transpose().mul_vec(delta);
    if libm::fabs(local.z) > cfg.translation_threshold {
        return if local.z > 0.0 {
            MotionLabel::Forward
        } else {
            MotionLabel::Backward
        };
    }
    if libm::fabs(delta.z) > cfg.vertical_threshold {
        return if delta.z > 0.0 {
            MotionLabel::Ascend
        } else {
            MotionLabel::Descend
        };
    }
    MotionLabel::Stationary
}

// ---------------------------------------------------------- navigation log --

#[derive(Debug, Clone, PartialEq)]
pub struct NavLogEntry {
    pub frame_id: FrameId,
    pub room_label: String,
    pub fov_tag: String,
    pub motion: MotionLabel,
    /// Sorted, no duplicates.
    pub visible_node_ids: Vec<TrackId>,
}

impl NavLogEntry {
    pub fn add_visible(&mut self, id: TrackId) {
        if let Err(pos) = self.visible_node_ids.binary_search(&id) {
            self.visible_node_ids.insert(pos, id);
        }
    }
}

/// Room label at the camera position of `frame`.
pub fn camera_room(frame: &Keyframe, rooms: &RoomModel, floors: &FloorModel, cfg: &SpatialConfig) -> Option<u32> {
    let t = frame.pose.translation;
    let floor = floors.floor_of(t.z)?;
    rooms.nearest_room(floor, t.x, t.y, cfg.room_lookup_radius)
}

#[allow(clippy::too_many_arguments)]
pub fn build_nav_entry(
    frame: &Keyframe,
    prev: Option<&Keyframe>,
    rooms: &RoomModel,
    floors: &FloorModel,
    mut visible: Vec<TrackId>,
    visible_captions: &[String],
    client: &mut BackendClient,
    cfg: &SpatialConfig,
) -> NavLogEntry {
    visible.sort();
    visible.dedup();
    let ctx = FrameContext {
        frame_id: frame.id,
        image: &frame.image,
        width: frame.intrinsics.width,
        height: frame.intrinsics.height,
    };
    let fov_tag = match client.call(&BackendRequest::fov(&ctx, visible_captions)) {
        Ok(BackendResponse::Fov(tag)) => tag,
        Ok(_) => UNAVAILABLE_FOV.to_string(),
        Err(e) => {
            log::warn!("frame {}: fov request failed: {e}", frame.id);
            UNAVAILABLE_FOV.to_string()
        }
    };
    NavLogEntry {
        frame_id: frame.id,
        room_label: rooms.label_of(camera_room(frame, rooms, floors, cfg)).to_string(),
        fov_tag,
        motion: prev.map_or(MotionLabel::Stationary, |p| motion_label(&p.pose, &frame.pose, cfg)),
        visible_node_ids: visible,
    }
}

/// Human-readable summary used in diagnostics.
pub fn describe_floors(f: &FloorModel) -> String {
    f.floors
        .iter()
        .map(|x| format!("floor {} [{:.2}, {:.2}]", x.floor_id, x.z_min, x.z_max))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn cfg() -> SpatialConfig {
        SpatialConfig::default()
    }

    #[test]
    fn single_height_cluster_is_one_floor() {
        let h: Vec<f64> = (0..50).map(|i| 1.35 + 0.002 * i as f64).collect();
        let m = detect_floors(&h, 0.1, 1.5).unwrap();
        assert_eq!(m.floors.len(), 1);
    }

    #[test]
    fn close_modes_merge_into_one_floor() {
        let mut h = vec![1.4; 20];
        h.extend(vec![1.9; 20]);
        assert_eq!(detect_floors(&h, 0.1, 1.5).unwrap().floors.len(), 1);
    }

    #[test]
    fn empty_heights_are_rejected() {
        assert!(detect_floors(&[], 0.1, 1.5).is_err());
    }

    #[test]
    fn floor_of_clamps_outside_heights() {
        let mut h = vec![1.4; 10];
        h.extend(vec![4.3; 10]);
        let m = detect_floors(&h, 0.1, 1.5).unwrap();
        assert_eq!(m.floor_of(-3.0), Some(0));
        assert_eq!(m.floor_of(99.0), Some(1));
    }

    fn brute_dt(g: &OccupancyGrid) -> Vec<f64> {
        let mut out = vec![0.0; g.width * g.height];
        for j in 0..g.height as isize {
            for i in 0..g.width as isize {
                if !g.is_free(i as usize, j as usize) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for wj in -1..=g.height as isize {
                    for wi in -1..=g.width as isize {
                        let outside = wi < 0 || wj < 0 || wi >= g.width as isize || wj >= g.height as isize;
                        if outside || !g.is_free(wi as usize, wj as usize) {
                            let d = (((wi - i) * (wi - i) + (wj - j) * (wj - j)) as f64).sqrt();
                            best = best.min(d);
                        }
                    }
                }
                out[g.index(i as usize, j as usize)] = best;
            }
        }
        out
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = OccupancyGrid::from_ascii(
            &["..........", "...#......", "..........", "......##..", "....#....."],
            0.1,
        )
        .unwrap();
        let fast = distance_transform(&g);
        let slow = brute_dt(&g);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn open_square_is_one_room_and_walls_are_none() {
        let rows: Vec<String> = (0..30).map(|_| ".".repeat(30)).collect();
        let r: Vec<&str> = rows.iter().map(String::as_str).collect();
        let g = OccupancyGrid::from_ascii(&r, 0.1).unwrap();
        assert_eq!(segment_rooms(&g, 1.0).room_count, 1);

        let walls: Vec<String> = (0..10).map(|_| "#".repeat(10)).collect();
        let r: Vec<&str> = walls.iter().map(String::as_str).collect();
        let g = OccupancyGrid::from_ascii(&r, 0.1).unwrap();
        assert_eq!(segment_rooms(&g, 1.0).room_count, 0);
    }

    fn yaw_pose(yaw_deg: f64, t: Vec3) -> Pose {
        // Level camera looking along world +x, then yawed about world z.
        let base = Mat3::from_cols(Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0));
        Pose::new(Mat3::rot_z(yaw_deg.to_radians()).mul_mat(&base), t).unwrap()
    }

    #[test]
    fn motion_examples() {
        let p = yaw_pose(0.0, Vec3::ZERO);
        assert_eq!(motion_label(&p, &p, &cfg()), MotionLabel::Stationary);
        let fwd = yaw_pose(0.0, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(motion_label(&p, &fwd, &cfg()), MotionLabel::Forward);
        assert_eq!(motion_label(&fwd, &p, &cfg()), MotionLabel::Backward);
        let left = yaw_pose(45.0, Vec3::new(0.05, 0.0, 0.0));
        assert_eq!(motion_label(&p, &left, &cfg()), MotionLabel::TurnLeft);
        let right = yaw_pose(-45.0, Vec3::ZERO);
        assert_eq!(motion_label(&p, &right, &cfg()), MotionLabel::TurnRight);
        let up = yaw_pose(0.0, Vec3::new(0.0, 0.0, 0.5));
        assert_eq!(motion_label(&p, &up, &cfg()), MotionLabel::Ascend);
        assert_eq!(motion_label(&up, &p, &cfg()), MotionLabel::Descend);
    }

    #[test]
    fn nearest_room_reaches_across_a_wall_cell() {
        let g = OccupancyGrid::from_ascii(&["....", "#...", "...."], 1.0).unwrap();
        let seg = segment_rooms(&g, 1.0);
        let mut m = RoomModel::default();
        m.add_floor(0, g, seg);
        assert_eq!(m.room_at(0, 0.5, 1.5), None);
        assert!(m.nearest_room(0, 0.5, 1.5, 1.0).is_some());
        assert_eq!(m.nearest_room(0, 50.0, 50.0, 1.0), None);
    }
}
