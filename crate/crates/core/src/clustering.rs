//! Detection-seeded DBSCAN over organized point clouds.
//!
//! [`adaptive_dbscan`] crops the cloud to a truss bounding box and grows
//! clusters only from fruit-center seed points, using a voxel grid with
//! cell size `eps` for neighborhood queries. [`naive_dbscan`] is the
//! textbook brute-force algorithm and serves as the reference result.
//! Both count every point-pair distance they evaluate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, Point3, PointCloud};
use crate::scalar::Real;

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(Error::domain(format!(
                "degenerate bbox [{}, {}, {}, {}]",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Pixel<T> {
        let two = T::lit(2.0);
        Pixel::new((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    /// Closed-rectangle membership.
    pub fn contains(&self, p: &Pixel<T>) -> bool {
        p.u >= self.x_min && p.u <= self.x_max && p.v >= self.y_min && p.v <= self.y_max
    }

    /// Grows the box by `margin` on every side and clamps it to the image.
    /// The result may be degenerate when the box lies outside the image.
    pub fn expanded_clamped(&self, margin: T, image: ImageBounds) -> Self {
        let w = T::from_u32(image.width).unwrap();
        let h = T::from_u32(image.height).unwrap();
        Self {
            x_min: (self.x_min - margin).max(T::zero()),
            y_min: (self.y_min - margin).max(T::zero()),
            x_max: (self.x_max + margin).min(w),
            y_max: (self.y_max + margin).min(h),
        }
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &Self) -> T {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(T::zero());
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(T::zero());
        w * h
    }
}

/// Image size used for clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageBounds {
    pub width: u32,
    pub height: u32,
}

impl<T: Real> From<&CameraIntrinsics<T>> for ImageBounds {
    fn from(k: &CameraIntrinsics<T>) -> Self {
        Self { width: k.width, height: k.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams<T> {
    /// Neighborhood radius, meters.
    pub eps: T,
    /// Core-point threshold; the query point counts toward it.
    pub min_pts: usize,
    /// Bounding-box growth before cropping, pixels.
    pub crop_margin: T,
    /// Half-size of the seed depth lookup window, pixels.
    pub seed_window: u32,
}

impl<T: Real> Default for ClusterParams<T> {
    fn default() -> Self {
        Self { eps: T::lit(0.03), min_pts: 8, crop_margin: T::lit(10.0), seed_window: 3 }
    }
}

impl<T: Real> ClusterParams<T> {
    pub fn validate(&self) -> Result<()> {
        check_eps_min_pts(self.eps, self.min_pts)?;
        if !(self.crop_margin >= T::zero()) {
            return Err(Error::domain("crop margin must be non-negative"));
        }
        Ok(())
    }
}

fn check_eps_min_pts<T: Real>(eps: T, min_pts: usize) -> Result<()> {
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::domain("min_pts must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Cluster(usize),
    /// Examined and found not density-reachable.
    Noise,
    /// Never examined.
    Unvisited,
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            _ => None,
        }
    }
}

/// Outcome for one seed pixel, in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedAssignment {
    /// Index of the resolved seed point in the input cloud.
    pub point: Option<usize>,
    /// Cluster containing the seed point; `None` means unreached.
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterStats {
    pub distance_computations: u64,
    pub points_visited: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// One label per point of the input cloud.
    pub labels: Vec<Label>,
    pub seed_assignments: Vec<SeedAssignment>,
    pub stats: ClusterStats,
}

impl ClusterResult {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().filter_map(|l| l.cluster()).max().map_or(0, |m| m + 1)
    }

    /// Indices of the members of `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Cluster(cluster))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Noise).count()
    }
}

/// Keeps the points whose source pixel lies in `bbox` grown by `margin`
/// (clamped to the image). Returns the sub-cloud and, for each kept point,
/// its index in `cloud`.
pub fn crop_by_bbox<T: Real>(
    cloud: &PointCloud<T>,
    bbox: &BBox<T>,
    margin: T,
    image: ImageBounds,
) -> Result<(PointCloud<T>, Vec<usize>)> {
    let map = cloud.pixel_map().ok_or_else(|| Error::domain("cloud has no pixel map"))?;
    let region = bbox.expanded_clamped(margin, image);
    let kept: Vec<usize> = map
        .iter()
        .enumerate()
        .filter(|(_, px)| region.contains(px))
        .map(|(i, _)| i)
        .collect();
    Ok((cloud.select(&kept), kept))
}

fn seed_index<T: Real>(pixel: &Pixel<T>, cloud: &PointCloud<T>, window: u32) -> Option<usize> {
    let map = cloud.pixel_map()?;
    let (su, sv) = pixel.rounded();
    let w = i64::from(window);
    let mut candidates: Vec<usize> = map
        .iter()
        .enumerate()
        .filter(|(_, px)| {
            let (u, v) = px.rounded();
            (u - su).abs() <= w && (v - sv).abs() <= w
        })
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let pts = cloud.points();
    candidates.sort_by(|&a, &b| pts[a].z.partial_cmp(&pts[b].z).unwrap().then(a.cmp(&b)));
    Some(candidates[(candidates.len() - 1) / 2])
}

/// Median-depth point among those whose (rounded) source pixel lies in the
/// `(2 window + 1)^2` square around `pixel`. Even counts take the lower median.
pub fn seed_point_lookup<T: Real>(pixel: &Pixel<T>, cloud: &PointCloud<T>, window: u32) -> Option<Point3<T>> {
    seed_index(pixel, cloud, window).map(|i| cloud.points()[i])
}

/// Neighborhood query strategy with a distance counter.
trait Neighbors<T> {
    /// All points within `eps` of point `i` (including `i`), ascending.
    fn query(&mut self, i: usize) -> Vec<usize>;
    fn stats(&self) -> ClusterStats;
}

struct BruteForce<'a, T> {
    points: &'a [Point3<T>],
    eps2: T,
    stats: ClusterStats,
}

impl<T: Real> Neighbors<T> for BruteForce<'_, T> {
    fn query(&mut self, i: usize) -> Vec<usize> {
        self.stats.points_visited += 1;
        self.stats.distance_computations += self.points.len() as u64;
        let p = self.points[i];
        (0..self.points.len()).filter(|&j| self.points[j].distance_squared(&p) <= self.eps2).collect()
    }

    fn stats(&self) -> ClusterStats {
        self.stats
    }
}

type Cell = (i64, i64, i64);

struct VoxelGrid<'a, T> {
    points: &'a [Point3<T>],
    eps2: T,
    inv_cell: T,
    cells: HashMap<Cell, Vec<usize>>,
    stats: ClusterStats,
}

impl<'a, T: Real> VoxelGrid<'a, T> {
    fn new(points: &'a [Point3<T>], eps: T) -> Self {
        let inv_cell = T::one() / eps;
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell_of(p, inv_cell)).or_default().push(i);
        }
        Self { points, eps2: eps * eps, inv_cell, cells, stats: ClusterStats::default() }
    }

    fn cell_of(p: &Point3<T>, inv_cell: T) -> Cell {
        let f = |v: T| (v * inv_cell).floor().to_i64().unwrap_or(0);
        (f(p.x), f(p.y), f(p.z))
    }
}

impl<T: Real> Neighbors<T> for VoxelGrid<'_, T> {
    fn query(&mut self, i: usize) -> Vec<usize> {
        self.stats.points_visited += 1;
        let p = self.points[i];
        let (cx, cy, cz) = Self::cell_of(&p, self.inv_cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        self.stats.distance_computations += bucket.len() as u64;
                        out.extend(bucket.iter().copied().filter(|&j| self.points[j].distance_squared(&p) <= self.eps2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn stats(&self) -> ClusterStats {
        self.stats
    }
}

/// Region growing shared by both algorithms. `start` must be a core point
/// whose neighborhood is `seeds`.
fn expand<T, N: Neighbors<T>>(
    index: &mut N,
    labels: &mut [Label],
    core: &mut [bool],
    start: usize,
    seeds: Vec<usize>,
    cluster: usize,
    min_pts: usize,
) {
    labels[start] = Label::Cluster(cluster);
    core[start] = true;
    let mut queue = seeds;
    let mut head = 0;
    while head < queue.len() {
        let q = queue[head];
        head += 1;
        match labels[q] {
            Label::Noise => labels[q] = Label::Cluster(cluster),
            Label::Cluster(_) => {}
            Label::Unvisited => {
                labels[q] = Label::Cluster(cluster);
                let n = index.query(q);
                if n.len() >= min_pts {
                    core[q] = true;
                    queue.extend(n);
                }
            }
        }
    }
}

/// Textbook DBSCAN with brute-force neighborhoods, scanning points in index order.
pub fn naive_dbscan<T: Real>(cloud: &PointCloud<T>, eps: T, min_pts: usize) -> Result<ClusterResult> {
    check_eps_min_pts(eps, min_pts)?;
    let points = cloud.points();
    let mut index = BruteForce { points, eps2: eps * eps, stats: ClusterStats::default() };
    let mut labels = vec![Label::Unvisited; points.len()];
    let mut core = vec![false; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if labels[i] != Label::Unvisited {
            continue;
        }
        let n = index.query(i);
        if n.len() < min_pts {
            labels[i] = Label::Noise;
            continue;
        }
        expand(&mut index, &mut labels, &mut core, i, n, next, min_pts);
        next += 1;
    }
    Ok(ClusterResult { labels, seed_assignments: Vec::new(), stats: index.stats() })
}

/// DBSCAN restricted to the truss crop and grown only from fruit seeds.
///
/// Seeds are processed in input order. A seed that is not itself a core
/// point starts its cluster from the first core point in its
/// neighborhood. Labels refer to the full input cloud; everything outside
/// the crop, and everything inside it that no expansion reached, stays
/// [`Label::Unvisited`].
pub fn adaptive_dbscan<T: Real>(
    cloud: &PointCloud<T>,
    truss_bbox: &BBox<T>,
    fruit_seed_pixels: &[Pixel<T>],
    params: &ClusterParams<T>,
    image: ImageBounds,
) -> Result<ClusterResult> {
    params.validate()?;
    if fruit_seed_pixels.is_empty() {
        return Err(Error::domain("adaptive clustering needs at least one seed pixel"));
    }
    let (crop, crop_map) = crop_by_bbox(cloud, truss_bbox, params.crop_margin, image)?;
    let seed_points: Vec<Option<usize>> = fruit_seed_pixels
        .iter()
        .map(|px| seed_index(px, &crop, params.seed_window))
        .collect();
    if seed_points.iter().all(Option::is_none) {
        return Err(Error::SeedResolution { seeds: fruit_seed_pixels.len() });
    }

    let points = crop.points();
    let mut index = VoxelGrid::new(points, params.eps);
    let mut labels = vec![Label::Unvisited; points.len()];
    let mut core = vec![false; points.len()];
    let mut next = 0;

    for &seed in seed_points.iter().flatten() {
        if labels[seed] != Label::Unvisited {
            continue;
        }
        let n = index.query(seed);
        if n.len() >= params.min_pts {
            expand(&mut index, &mut labels, &mut core, seed, n, next, params.min_pts);
            next += 1;
            continue;
        }
        labels[seed] = Label::Noise;
        for q in n.into_iter().filter(|&q| q != seed) {
            match labels[q] {
                Label::Cluster(c) if core[q] => {
                    labels[seed] = Label::Cluster(c);
                    break;
                }
                Label::Unvisited => {
                    let nq = index.query(q);
                    if nq.len() >= params.min_pts {
                        expand(&mut index, &mut labels, &mut core, q, nq, next, params.min_pts);
                        next += 1;
                        break;
                    }
                    labels[q] = Label::Noise;
                }
                _ => {}
            }
        }
    }

    let mut full = vec![Label::Unvisited; cloud.len()];
    for (local, &orig) in crop_map.iter().enumerate() {
        full[orig] = labels[local];
    }
    let seed_assignments = seed_points
        .iter()
        .map(|s| SeedAssignment {
            point: s.map(|l| crop_map[l]),
            cluster: s.and_then(|l| labels[l].cluster()),
        })
        .collect();
    Ok(ClusterResult { labels: full, seed_assignments, stats: index.stats() })
}

/// Median depth of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterDepth<T> {
    pub cluster: usize,
    pub median_z: T,
    pub size: usize,
}

/// Clusters ordered front to back by median depth; ties by cluster id.
pub fn split_foreground_background<T: Real>(
    clusters: &ClusterResult,
    cloud: &PointCloud<T>,
) -> Result<Vec<ClusterDepth<T>>> {
    if clusters.labels.len() != cloud.len() {
        return Err(Error::domain("cluster labels do not match the cloud"));
    }
    let mut depths: Vec<Vec<T>> = vec![Vec::new(); clusters.cluster_count()];
    for (label, p) in clusters.labels.iter().zip(cloud.points()) {
        if let Label::Cluster(c) = label {
            depths[*c].push(p.z);
        }
    }
    let mut out: Vec<ClusterDepth<T>> = depths
        .into_iter()
        .enumerate()
        .filter(|(_, zs)| !zs.is_empty())
        .map(|(cluster, zs)| ClusterDepth { cluster, size: zs.len(), median_z: median(zs) })
        .collect();
    if out.is_empty() {
        return Err(Error::domain("no clusters to order"));
    }
    out.sort_by(|a, b| a.median_z.partial_cmp(&b.median_z).unwrap().then(a.cluster.cmp(&b.cluster)));
    Ok(out)
}

/// Median of a non-empty sample (mean of the two middle values for even sizes).
pub(crate) fn median<T: Real>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}
