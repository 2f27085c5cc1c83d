//! Shared scene builders and brute-force reference implementations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truss_harvest::clustering::{BBox, ClusterParams, ClusterResult, ImageBounds, Label};
use truss_harvest::geometry::{project, CameraIntrinsics, Pixel, Point3, PointCloud};
use truss_harvest::phenotyping::{FruitSphere, MaturityStage};
use truss_harvest::planning::{EffectorModel, Phase, Trajectory, Waypoint};

pub fn camera() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(460.0, 460.0, 320.0, 240.0, 640, 480).unwrap()
}

/// Organized cloud made of spherical blobs over a sparse far background.
pub struct BlobScene {
    pub cloud: PointCloud<f64>,
    pub bbox: BBox<f64>,
    pub seeds: Vec<Pixel<f64>>,
    pub image: ImageBounds,
}

pub fn blob_scene(seed: u64, max_points: usize) -> BlobScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = camera();
    let blobs = rng.random_range(3..=6);
    let per_blob = rng.random_range(100..=(max_points / 2 / blobs).max(101));
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    let mut centers = Vec::new();
    for _ in 0..blobs {
        let z = rng.random_range(0.5..1.2);
        let c = Point3::new(rng.random_range(-0.35..0.35) * z, rng.random_range(-0.25..0.25) * z, z);
        let r = rng.random_range(0.02..0.05);
        centers.push((c, r));
        for _ in 0..per_blob {
            let d = loop {
                let p = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if p.norm() <= 1.0 {
                    break p;
                }
            };
            let p = c + d * r;
            points.push(p);
            pixels.push(project(p, &k).unwrap());
        }
    }
    while points.len() < max_points {
        let z = rng.random_range(2.0..4.0);
        let px = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        points.push(truss_harvest::geometry::backproject(px, z, &k).unwrap());
        pixels.push(px);
    }
    // truss box around one or two blobs
    let chosen = rng.random_range(1..=2).min(blobs);
    let mut bbox = BBox { x_min: f64::MAX, y_min: f64::MAX, x_max: f64::MIN, y_max: f64::MIN };
    let mut seeds = Vec::new();
    for (c, r) in centers.iter().take(chosen) {
        let px = project(*c, &k).unwrap();
        let rp = k.fx * r / c.z;
        bbox.x_min = bbox.x_min.min(px.u - rp);
        bbox.y_min = bbox.y_min.min(px.v - rp);
        bbox.x_max = bbox.x_max.max(px.u + rp);
        bbox.y_max = bbox.y_max.max(px.v + rp);
        seeds.push(px);
    }
    let bbox = BBox::new(bbox.x_min.max(0.0), bbox.y_min.max(0.0), bbox.x_max.min(639.0), bbox.y_max.min(479.0)).unwrap();
    BlobScene { cloud: PointCloud::with_pixels(points, pixels).unwrap(), bbox, seeds, image: ImageBounds::from(&k) }
}

/// Indices whose source pixel lies in the box grown by `margin` and clamped.
pub fn oracle_crop(cloud: &PointCloud<f64>, bbox: &BBox<f64>, margin: f64, image: ImageBounds) -> Vec<usize> {
    let (x0, y0) = ((bbox.x_min - margin).max(0.0), (bbox.y_min - margin).max(0.0));
    let (x1, y1) = ((bbox.x_max + margin).min(image.width as f64), (bbox.y_max + margin).min(image.height as f64));
    let map = cloud.pixel_map().unwrap();
    (0..cloud.len()).filter(|&i| map[i].u >= x0 && map[i].u <= x1 && map[i].v >= y0 && map[i].v <= y1).collect()
}

/// Lower-median-depth point in the rounded-pixel window, by global index.
pub fn oracle_seed(cloud: &PointCloud<f64>, subset: &[usize], px: &Pixel<f64>, window: i64) -> Option<usize> {
    let map = cloud.pixel_map().unwrap();
    let (su, sv) = (px.u.round() as i64, px.v.round() as i64);
    let mut c: Vec<usize> = subset
        .iter()
        .copied()
        .filter(|&i| (map[i].u.round() as i64 - su).abs() <= window && (map[i].v.round() as i64 - sv).abs() <= window)
        .collect();
    if c.is_empty() {
        return None;
    }
    let pts = cloud.points();
    c.sort_by(|&a, &b| pts[a].z.partial_cmp(&pts[b].z).unwrap().then(a.cmp(&b)));
    Some(c[(c.len() - 1) / 2])
}

/// Textbook DBSCAN over the cropped points, mapped back to cloud indices.
pub struct OracleClusters {
    pub kept: Vec<usize>,
    pub seeds: Vec<Option<usize>>,
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
}

/// Index-order DBSCAN with exhaustive neighborhoods; returns labels, core
/// flags and the number of distance evaluations.
pub fn textbook_dbscan(points: &[Point3<f64>], eps: f64, min_pts: usize) -> (Vec<Option<usize>>, Vec<bool>, u64) {
    let n = points.len();
    let mut evals = 0u64;
    let mut neigh = |i: usize| -> Vec<usize> {
        evals += n as u64;
        (0..n).filter(|&j| points[i].distance(&points[j]) <= eps).collect()
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut core = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let ni = neigh(i);
        if ni.len() < min_pts {
            continue;
        }
        core[i] = true;
        label[i] = Some(next);
        let mut queue = ni;
        let mut q = 0;
        while q < queue.len() {
            let j = queue[q];
            q += 1;
            if label[j].is_none() {
                label[j] = Some(next);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nj = neigh(j);
            if nj.len() >= min_pts {
                core[j] = true;
                queue.extend(nj);
            }
        }
        next += 1;
    }
    (label, core, evals)
}

pub fn oracle_clusters(scene: &BlobScene, params: &ClusterParams<f64>) -> OracleClusters {
    let kept = oracle_crop(&scene.cloud, &scene.bbox, params.crop_margin, scene.image);
    let pts: Vec<Point3<f64>> = kept.iter().map(|&i| scene.cloud.points()[i]).collect();
    let (local, core_local, _) = textbook_dbscan(&pts, params.eps, params.min_pts);
    let mut labels = vec![None; scene.cloud.len()];
    let mut core = vec![false; scene.cloud.len()];
    for (l, &g) in kept.iter().enumerate() {
        labels[g] = local[l];
        core[g] = core_local[l];
    }
    let seeds = scene.seeds.iter().map(|px| oracle_seed(&scene.cloud, &kept, px, params.seed_window as i64)).collect();
    OracleClusters { kept, seeds, labels, core }
}

/// Matches each seeded cluster to the oracle cluster sharing its core
/// points. Core sets must agree exactly; returns the largest share of
/// differing (border) points.
pub fn compare_seeded(result: &ClusterResult, oracle: &OracleClusters) -> Result<f64, String> {
    use std::collections::BTreeSet;
    let mut worst: f64 = 0.0;
    for (i, a) in result.seed_assignments.iter().enumerate() {
        if a.point != oracle.seeds[i] {
            return Err(format!("seed {i}: point {:?} vs oracle {:?}", a.point, oracle.seeds[i]));
        }
        let seed_reaches_core = oracle.seeds[i].is_some_and(|s| oracle.labels[s].is_some());
        let Some(c) = a.cluster else {
            if seed_reaches_core {
                return Err(format!("seed {i}: unreached but oracle clusters it"));
            }
            continue;
        };
        let got: BTreeSet<usize> = result.members(c).into_iter().collect();
        let cores: BTreeSet<usize> = got.iter().copied().filter(|&p| oracle.core[p]).collect();
        let ids: BTreeSet<usize> = cores.iter().filter_map(|&p| oracle.labels[p]).collect();
        if ids.len() != 1 {
            return Err(format!("seed {i}: cluster spans {} oracle clusters", ids.len()));
        }
        let id = *ids.iter().next().unwrap();
        let want: BTreeSet<usize> = oracle.kept.iter().copied().filter(|&p| oracle.labels[p] == Some(id)).collect();
        let want_cores: BTreeSet<usize> = want.iter().copied().filter(|&p| oracle.core[p]).collect();
        if cores != want_cores {
            return Err(format!("seed {i}: core sets differ ({} vs {})", cores.len(), want_cores.len()));
        }
        let diff = got.symmetric_difference(&want).count();
        worst = worst.max(diff as f64 / got.union(&want).count().max(1) as f64);
    }
    Ok(worst)
}

pub fn unvisited_outside_crop(result: &ClusterResult, kept: &[usize]) -> bool {
    let inside: std::collections::HashSet<usize> = kept.iter().copied().collect();
    result.labels.iter().enumerate().all(|(i, l)| inside.contains(&i) || *l == Label::Unvisited)
}

/// Exhaustive statement of the truss ripeness rule on stage ordinals.
pub fn maturity_oracle(stages: &[MaturityStage], terminal: usize) -> bool {
    let ord = |m: MaturityStage| MaturityStage::ALL.iter().position(|x| *x == m).unwrap();
    stages.iter().enumerate().all(|(i, m)| if i == terminal { ord(*m) >= 1 } else { ord(*m) >= 2 })
}

pub const ORACLE_ANGLES: usize = 200;
pub const ORACLE_ROWS: usize = 50;

/// Smallest distance from `p` to 10⁴ points sampled on the effector wall
/// (rows include both edge circles).
pub fn sampled_wall_distance(p: &Point3<f64>, rim: &Point3<f64>, e: &EffectorModel<f64>) -> f64 {
    let mut best = f64::MAX;
    for a in 0..ORACLE_ANGLES {
        let th = std::f64::consts::TAU * a as f64 / ORACLE_ANGLES as f64;
        let (s, c) = th.sin_cos();
        for r in 0..ORACLE_ROWS {
            let y = e.height * r as f64 / (ORACLE_ROWS - 1) as f64;
            let q = *rim + Point3::new(e.inner_radius * c, y, e.inner_radius * s);
            best = best.min(q.distance(p));
        }
    }
    best
}

/// Random trajectory with spheres placed near its walls.
pub fn collision_scene(seed: u64) -> (Trajectory<f64>, Vec<FruitSphere<f64>>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..12);
    let mut p = Point3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1), rng.random_range(0.6..0.9));
    let mut waypoints = Vec::new();
    for i in 0..n {
        let phase = if i == 0 { Phase::Position } else { Phase::Wrap };
        waypoints.push(Waypoint { position: p, phase, yaw_deg: 0.0 });
        p += Point3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.04..0.0), rng.random_range(-0.03..0.03));
    }
    let e = EffectorModel::<f64>::default();
    let spheres = (0..rng.random_range(1..5))
        .map(|_| {
            let w = waypoints[rng.random_range(0..n)].position;
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rho: f64 = e.inner_radius + rng.random_range(-0.06..0.06);
            let y = rng.random_range(-0.05..e.height + 0.05);
            let c = w + Point3::new(rho * th.cos(), y, rho * th.sin());
            FruitSphere::new(c, rng.random_range(0.015..0.035)).unwrap()
        })
        .collect();
    let clearance = rng.random_range(0.003..0.01);
    (Trajectory { waypoints }, spheres, clearance)
}
