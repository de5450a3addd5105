//! Masked depth back-projection, voxel downsampling, DBSCAN denoising and the
//! geometric-overlap signal used by track association.
//!
//! Conventions: camera frame is x right, y down, z forward (pinhole); world
//! frame is z up. Poses map camera coordinates into the world.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Tolerance for pose orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::contract("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::contract("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::contract("cy outside image"));
        }
        Ok(())
    }

    /// Pixel (u, v) at depth z in camera coordinates.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Camera-frame point to (u, v); `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.orthonormality_error() > ROTATION_TOLERANCE
            || (self.rotation.determinant() - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Error::contract("rotation is not a proper orthonormal matrix"));
        }
        if !self.translation.is_finite() {
            return Err(Error::contract("translation is not finite"));
        }
        Ok(())
    }

    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn inverse_transform(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Applies `other` after `self`: the pose of this camera seen from a
    /// world transformed by `other`.
    pub fn premultiply(&self, other: &Pose) -> Pose {
        Pose {
            rotation: other.rotation.mul_mat(&self.rotation),
            translation: other.transform(self.translation),
        }
    }

    /// Camera that sits at `eye` and looks at `target` with world z up.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Pose> {
        let forward = (target - eye).normalized();
        let world_up = Vec3::new(0.0, 0.0, 1.0);
        let mut right = forward.cross(world_up);
        if right.norm() < 1e-9 {
            // Looking straight down or up: image top points along +y.
            right = forward.cross(Vec3::new(0.0, 1.0, 0.0));
        }
        let right = right.normalized();
        let down = forward.cross(right).normalized();
        Pose::new(Mat3::from_cols(right, down, forward), eye)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        debug_assert!(points.iter().all(|p| p.is_finite()));
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn summary(&self) -> CloudSummary {
        CloudSummary::of(self)
    }
}

/// Compact description of a cloud used where raw points are too large.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CloudSummary {
    pub centroid: Vec3,
    /// Axis-aligned size (max - min per axis).
    pub extent: Vec3,
    pub count: usize,
}

impl CloudSummary {
    pub fn of(cloud: &PointCloud) -> Self {
        let Some(first) = cloud.points.first() else {
            return CloudSummary::default();
        };
        let (mut lo, mut hi, mut sum) = (*first, *first, Vec3::ZERO);
        for p in &cloud.points {
            lo = lo.min(*p);
            hi = hi.max(*p);
            sum = sum + *p;
        }
        CloudSummary {
            centroid: sum.scale(1.0 / cloud.len() as f64),
            extent: hi - lo,
            count: cloud.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Row-major depth in meters; 0 marks an invalid reading.
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::contract("depth buffer size does not match dimensions"));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::contract("negative depth value"));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, z: f32) {
        let w = self.width;
        self.values[(v * w + u) as usize] = z;
    }
}

/// Pixel bounding box, inclusive-exclusive: `[u_min, u_max) x [v_min, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BBox {
    pub fn new(u_min: u32, v_min: u32, u_max: u32, v_max: u32) -> Self {
        BBox {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.u_min < self.u_max && self.v_min < self.v_max
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.is_well_formed() && self.u_max <= width && self.v_max <= height
    }

    pub fn area(&self) -> u64 {
        (self.u_max.saturating_sub(self.u_min) as u64) * (self.v_max.saturating_sub(self.v_min) as u64)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let iu = self.u_max.min(o.u_max).saturating_sub(self.u_min.max(o.u_min)) as u64;
        let iv = self.v_max.min(o.v_max).saturating_sub(self.v_min.max(o.v_min)) as u64;
        let inter = iu * iv;
        let union = self.area() + o.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Foreground pixel set of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Horizontal run `[u_start, u_end)` on row `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRun {
    pub v: u32,
    pub u_start: u32,
    pub u_end: u32,
}

impl PixelMask {
    pub fn empty(width: u32, height: u32) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: &[(u32, u32)]) -> Result<Self> {
        let mut mask = PixelMask::empty(width, height);
        for &(u, v) in pixels {
            mask.insert(u, v)?;
        }
        Ok(mask)
    }

    pub fn from_bbox(width: u32, height: u32, bbox: &BBox) -> Result<Self> {
        if !bbox.fits(width, height) {
            return Err(Error::contract("bbox outside image"));
        }
        let mut mask = PixelMask::empty(width, height);
        for v in bbox.v_min..bbox.v_max {
            for u in bbox.u_min..bbox.u_max {
                mask.bits[(v * width + u) as usize] = true;
            }
        }
        Ok(mask)
    }

    pub fn from_runs(width: u32, height: u32, runs: &[MaskRun]) -> Result<Self> {
        let mut mask = PixelMask::empty(width, height);
        for r in runs {
            if r.v >= height || r.u_end > width || r.u_start > r.u_end {
                return Err(Error::contract("mask run outside image"));
            }
            for u in r.u_start..r.u_end {
                mask.bits[(r.v * width + u) as usize] = true;
            }
        }
        Ok(mask)
    }

    pub fn to_runs(&self) -> Vec<MaskRun> {
        let mut runs = Vec::new();
        for v in 0..self.height {
            let mut u = 0;
            while u < self.width {
                if self.contains(u, v) {
                    let start = u;
                    while u < self.width && self.contains(u, v) {
                        u += 1;
                    }
                    runs.push(MaskRun {
                        v,
                        u_start: start,
                        u_end: u,
                    });
                } else {
                    u += 1;
                }
            }
        }
        runs
    }

    pub fn insert(&mut self, u: u32, v: u32) -> Result<()> {
        if u >= self.width || v >= self.height {
            return Err(Error::contract("mask pixel outside image"));
        }
        self.bits[(v * self.width + u) as usize] = true;
        Ok(())
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height && self.bits[(v * self.width + u) as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.pixels();
        let (u0, v0) = it.next()?;
        let mut b = BBox::new(u0, v0, u0 + 1, v0 + 1);
        for (u, v) in it {
            b.u_min = b.u_min.min(u);
            b.v_min = b.v_min.min(v);
            b.u_max = b.u_max.max(u + 1);
            b.v_max = b.v_max.max(v + 1);
        }
        Some(b)
    }
}

/// Lifts every masked pixel with a valid depth into the world frame.
pub fn backproject(
    depth: &DepthMap,
    mask: &PixelMask,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Result<PointCloud> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::contract("depth map and intrinsics dimensions differ"));
    }
    if mask.width != intr.width || mask.height != intr.height {
        return Err(Error::contract("mask and intrinsics dimensions differ"));
    }
    let points = mask
        .pixels()
        .filter_map(|(u, v)| {
            let z = depth.get(u, v) as f64;
            if !(z.is_finite() && z > 0.0) {
                return None;
            }
            Some(pose.transform(intr.unproject(u as f64, v as f64, z)))
        })
        .collect();
    Ok(PointCloud { points })
}

/// Projects a world point to `(u, v, depth)`; `None` behind the camera.
pub fn project(point: Vec3, intr: &CameraIntrinsics, pose: &Pose) -> Option<(f64, f64, f64)> {
    let p = pose.inverse_transform(point);
    let (u, v) = intr.project(p)?;
    Some((u, v, p.z))
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vec3, size: f64) -> Cell {
    (
        libm::floor(p.x / size) as i64,
        libm::floor(p.y / size) as i64,
        libm::floor(p.z / size) as i64,
    )
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output is ordered by ascending cell index. Members are summed in sorted
/// order so the result does not depend on input order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::contract("voxel size must be positive"));
    }
    let mut cells: BTreeMap<Cell, Vec<Vec3>> = BTreeMap::new();
    for p in &cloud.points {
        cells.entry(cell_of(p, voxel)).or_default().push(*p);
    }
    let points = cells
        .into_values()
        .map(|mut members| {
            members.sort_by(Vec3::lex_cmp);
            let (mut lo, mut hi, mut sum) = (members[0], members[0], Vec3::ZERO);
            for m in &members {
                lo = lo.min(*m);
                hi = hi.max(*m);
                sum = sum + *m;
            }
            let c = sum.scale(1.0 / members.len() as f64);
            // Rounding can nudge the centroid across a cell face; the member
            // bounding box keeps it inside the cell.
            Vec3::new(
                c.x.clamp(lo.x, hi.x),
                c.y.clamp(lo.y, hi.y),
                c.z.clamp(lo.z, hi.z),
            )
        })
        .collect();
    Ok(PointCloud { points })
}

fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Uniform grid over a point set answering fixed-radius queries.
///
/// Cells are twice the radius wide so that any neighbor within the radius
/// lies in one of the 27 surrounding cells even after rounding.
struct RadiusGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    radius_sq: f64,
    cells: BTreeMap<Cell, Vec<usize>>,
}

impl<'a> RadiusGrid<'a> {
    fn new(points: &'a [Vec3], radius: f64) -> Self {
        let cell = 2.0 * radius;
        let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell)).or_default().push(i);
        }
        RadiusGrid {
            points,
            cell,
            radius_sq: radius * radius,
            cells,
        }
    }

    fn for_each_neighbor(&self, q: &Vec3, mut f: impl FnMut(usize) -> bool) {
        let (cx, cy, cz) = cell_of(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in ids {
                            if dist_sq(q, &self.points[i]) <= self.radius_sq && !f(i) {
                                return;
                            }
                        }
                    }
                }
            }
        }
    }

    fn any_within(&self, q: &Vec3) -> bool {
        let mut found = false;
        self.for_each_neighbor(q, |_| {
            found = true;
            false
        });
        found
    }

    fn neighbors(&self, q: &Vec3) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_neighbor(q, |i| {
            out.push(i);
            true
        });
        out
    }
}

/// Runs DBSCAN (Euclidean, border points kept) and returns the most
/// populated cluster, or an empty cloud when every point is noise.
///
/// Points come back in lexicographic order. Equal-sized clusters are
/// resolved in favour of the one holding the lexicographically smallest
/// point.
pub fn largest_cluster(cloud: &PointCloud, eps: f64, min_points: usize) -> Result<PointCloud> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::contract("eps must be positive"));
    }
    if min_points < 1 {
        return Err(Error::contract("min_points must be at least 1"));
    }
    let mut pts = cloud.points.clone();
    pts.sort_by(Vec3::lex_cmp);
    let labels = dbscan(&pts, eps, min_points);
    let Some(best) = labels.iter().flatten().copied().max() else {
        return Ok(PointCloud::default());
    };
    let mut sizes = vec![0usize; best + 1];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    // `pts` is sorted, so the first member seen of each cluster is its
    // smallest point; scanning in order makes the earliest winner stick.
    let mut order: Vec<usize> = Vec::new();
    for l in labels.iter().flatten() {
        if !order.contains(l) {
            order.push(*l);
        }
    }
    let mut winner = order[0];
    for &l in &order[1..] {
        if sizes[l] > sizes[winner] {
            winner = l;
        }
    }
    let points = pts
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(winner))
        .map(|(p, _)| *p)
        .collect();
    Ok(PointCloud { points })
}

/// Cluster label per point; `None` marks noise.
fn dbscan(pts: &[Vec3], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let grid = RadiusGrid::new(pts, eps);
    let mut labels: Vec<Option<usize>> = vec![None; pts.len()];
    let mut visited = vec![false; pts.len()];
    let mut next = 0usize;
    for i in 0..pts.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = grid.neighbors(&pts[i]);
        if seeds.len() < min_points {
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(id);
        let mut queue = seeds;
        queue.sort_unstable();
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let mut nb = grid.neighbors(&pts[j]);
            if nb.len() >= min_points {
                nb.sort_unstable();
                queue.extend(nb.into_iter().filter(|k| labels[*k].is_none() || !visited[*k]));
            }
        }
    }
    labels
}

/// Fraction of detection points within `delta_g` of some track point.
pub fn geometric_overlap(detection: &PointCloud, track: &PointCloud, delta_g: f64) -> Result<f64> {
    if !(delta_g > 0.0 && delta_g.is_finite()) {
        return Err(Error::contract("delta_g must be positive"));
    }
    if detection.is_empty() || track.is_empty() {
        return Ok(0.0);
    }
    let grid = RadiusGrid::new(&track.points, delta_g);
    let hits = detection.points.iter().filter(|p| grid.any_within(p)).count();
    Ok(hits as f64 / detection.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).unwrap()
    }

    fn single_pixel(u: u32, v: u32, z: f32) -> (DepthMap, PixelMask) {
        let mut d = DepthMap::zeros(160, 120);
        d.set(u, v, z);
        (d, PixelMask::from_pixels(160, 120, &[(u, v)]).unwrap())
    }

    #[test]
    fn principal_point_backprojects_onto_axis() {
        let (d, m) = single_pixel(80, 60, 1.0);
        let c = backproject(&d, &m, &intr(), &Pose::IDENTITY).unwrap();
        assert_eq!(c.points, vec![Vec3::new(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn one_focal_length_off_center() {
        let wide = CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 200, 120).unwrap();
        let mut d = DepthMap::zeros(200, 120);
        d.set(180, 60, 2.0);
        let m = PixelMask::from_pixels(200, 120, &[(180, 60)]).unwrap();
        let c = backproject(&d, &m, &wide, &Pose::IDENTITY).unwrap();
        assert_eq!(c.points, vec![Vec3::new(2.0, 0.0, 2.0)]);
    }

    #[test]
    fn zero_depth_pixels_are_skipped() {
        let d = DepthMap::zeros(160, 120);
        let m = PixelMask::from_bbox(160, 120, &BBox::new(10, 10, 20, 20)).unwrap();
        assert!(backproject(&d, &m, &intr(), &Pose::IDENTITY).unwrap().is_empty());
    }

    #[test]
    fn non_finite_depth_is_skipped() {
        let (mut d, m) = single_pixel(5, 5, 1.0);
        d.set(5, 5, f32::NAN);
        assert!(backproject(&d, &m, &intr(), &Pose::IDENTITY).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = DepthMap::zeros(100, 100);
        let m = PixelMask::empty(160, 120);
        assert!(matches!(
            backproject(&d, &m, &intr(), &Pose::IDENTITY),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn voxel_merges_points_in_one_cell() {
        let c = PointCloud::new(vec![Vec3::new(0.001, 0.0, 0.0), Vec3::new(0.015, 0.0, 0.0)]);
        let out = voxel_downsample(&c, 0.02).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0].x - 0.008).abs() < 1e-12);
    }

    #[test]
    fn voxel_keeps_points_in_distinct_cells() {
        let c = PointCloud::new(vec![Vec3::new(0.03, 0.0, 0.0), Vec3::new(0.01, 0.0, 0.0)]);
        let out = voxel_downsample(&c, 0.02).unwrap();
        assert_eq!(out.points, vec![Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.03, 0.0, 0.0)]);
    }

    #[test]
    fn voxel_rejects_nonpositive_size() {
        assert!(voxel_downsample(&PointCloud::default(), 0.0).is_err());
    }

    #[test]
    fn isolated_points_form_no_cluster() {
        let c = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
        ]);
        assert!(largest_cluster(&c, 0.5, 5).unwrap().is_empty());
    }

    #[test]
    fn equal_clusters_prefer_smallest_point() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(Vec3::new(5.0 + i as f64 * 0.01, 0.0, 0.0));
            pts.push(Vec3::new(-5.0 + i as f64 * 0.01, 0.0, 0.0));
        }
        let out = largest_cluster(&PointCloud::new(pts), 0.5, 5).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.points.iter().all(|p| p.x < 0.0));
    }

    #[test]
    fn overlap_counts_points_within_delta() {
        let det = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.04),
            Vec3::new(2.0, 2.0, 2.0),
        ]);
        let track = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.03)]);
        assert_eq!(geometric_overlap(&det, &track, 0.05).unwrap(), 0.75);
        assert_eq!(geometric_overlap(&det, &det, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn overlap_of_empty_detection_is_zero() {
        let track = PointCloud::new(vec![Vec3::ZERO]);
        assert_eq!(geometric_overlap(&PointCloud::default(), &track, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn look_at_produces_valid_pose() {
        let p = Pose::look_at(Vec3::new(1.0, 1.0, 1.5), Vec3::new(3.0, 2.0, 0.5)).unwrap();
        let (u, v, z) = project(Vec3::new(3.0, 2.0, 0.5), &intr(), &p).unwrap();
        assert!((u - 80.0).abs() < 1e-9 && (v - 60.0).abs() < 1e-9 && z > 0.0);
        let down = Pose::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::ZERO).unwrap();
        assert!(down.validate().is_ok());
    }

    #[test]
    fn mask_runs_round_trip() {
        let m = PixelMask::from_pixels(10, 4, &[(1, 0), (2, 0), (5, 3), (9, 3)]).unwrap();
        let back = PixelMask::from_runs(10, 4, &m.to_runs()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.bbox(), Some(BBox::new(1, 0, 10, 4)));
    }
}
