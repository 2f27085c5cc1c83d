//! Synthetic truss scenes with rendered detections and depth clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::BBox;
use crate::error::{Error, Result};
use crate::geometry::{backproject, project, CameraIntrinsics, Pixel, Point3, PointCloud};
use crate::phenotyping::{truss_maturity, Detection, FruitSphere, MaturityStage};
use crate::pose::{classify_orientation, OrientationClass, PedicelKeypoints3, DEFAULT_INWARD_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Trusses per scene, placed side by side.
    pub truss_count: usize,
    pub min_fruits: usize,
    pub max_fruits: usize,
    /// Fruit radius range, meters.
    pub fruit_radius: (f64, f64),
    /// SP depth range, meters.
    pub depth_range: (f64, f64),
    /// Relative frequency of Front, Right, Left, Back, Inward trusses.
    pub orientation_weights: [f64; 5],
    /// Probability that a truss is generated ripe.
    pub ripe_fraction: f64,
    /// Pixel step of the rendered depth image.
    pub pixel_stride: u32,
    /// Depth of the background wall, meters.
    pub background_depth: f64,
    /// Only every n-th rendered background pixel is kept.
    pub background_sparsity: u32,
    /// Effector bore radius the trusses must fit in, meters.
    pub bore_radius: f64,
    /// Minimum gap between any fruit and the bore wall along the nominal path.
    pub bore_margin: f64,
    pub camera: CameraIntrinsics<f64>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            truss_count: 1,
            min_fruits: 3,
            max_fruits: 7,
            fruit_radius: (0.018, 0.028),
            depth_range: (0.6, 0.9),
            orientation_weights: [0.4, 0.4, 0.1, 0.05, 0.05],
            ripe_fraction: 0.9,
            pixel_stride: 2,
            background_depth: 1.6,
            background_sparsity: 4,
            bore_radius: 0.1,
            bore_margin: 0.01,
            camera: CameraIntrinsics { fx: 460.0, fy: 460.0, cx: 320.0, cy: 240.0, width: 640, height: 480 },
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(1..=3).contains(&self.truss_count) {
            return Err(Error::domain(format!("truss count must be 1 to 3, got {}", self.truss_count)));
        }
        if self.min_fruits == 0 || self.min_fruits > self.max_fruits || self.max_fruits > 12 {
            return Err(Error::domain(format!("fruit count range {}..={} invalid", self.min_fruits, self.max_fruits)));
        }
        let (r0, r1) = self.fruit_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1 <= 0.04) {
            return Err(Error::domain("fruit radius range must lie in (0, 0.04]"));
        }
        let (z0, z1) = self.depth_range;
        if !(z0 >= 0.4 && z0 <= z1 && z1 <= 1.2) {
            return Err(Error::domain("depth range must lie in [0.4, 1.2]"));
        }
        if self.orientation_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.orientation_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::domain("orientation weights must be non-negative with a positive sum"));
        }
        if !(0.0..=1.0).contains(&self.ripe_fraction) {
            return Err(Error::domain("ripe fraction must lie in [0, 1]"));
        }
        if self.pixel_stride == 0 || self.background_sparsity == 0 {
            return Err(Error::domain("pixel stride and background sparsity must be positive"));
        }
        if !(self.bore_radius > 0.0 && self.bore_margin >= 0.0 && self.bore_margin < self.bore_radius) {
            return Err(Error::domain("bore margin must lie in [0, bore radius)"));
        }
        if !(self.background_depth > z1 + 0.3) {
            return Err(Error::domain("background must lie at least 0.3 m behind the trusses"));
        }
        Ok(())
    }
}

/// Vertical droop profile of a peduncle: height above SP is
/// `a * s - b * s^2` at horizontal distance `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Droop {
    pub a: f64,
    pub b: f64,
}

impl Droop {
    pub fn height(&self, s: f64) -> f64 {
        self.a * s - self.b * s * s
    }

    /// Arc length of the profile between horizontal distances `s0 <= s1`.
    pub fn arc_length(&self, s0: f64, s1: f64) -> f64 {
        let f = |w: f64| 0.5 * (w * (1.0 + w * w).sqrt() + w.asinh());
        let w = |s: f64| self.a - 2.0 * self.b * s;
        (f(w(s0)) - f(w(s1))) / (2.0 * self.b)
    }

    /// Horizontal distance at which the arc length from `s0` equals `len`.
    pub fn at_arc_length(&self, s0: f64, len: f64) -> f64 {
        let (mut lo, mut hi) = (s0, s0 + len);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.arc_length(s0, mid) < len {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruss {
    pub truss_id: u64,
    pub keypoints: PedicelKeypoints3<f64>,
    /// Horizontal distance of each keypoint from SP along `growth`.
    pub keypoint_offsets: [f64; 7],
    pub growth: Point3<f64>,
    pub droop: Droop,
    pub spheres: Vec<FruitSphere<f64>>,
    pub maturities: Vec<MaturityStage>,
    /// Index of the fruit hanging at EP.
    pub terminal: usize,
    pub ripe: bool,
    pub orientation: OrientationClass,
}

impl SyntheticTruss {
    pub fn fruit_ids(&self) -> Vec<u64> {
        (0..self.spheres.len()).map(|i| self.truss_id * 100 + i as u64 + 1).collect()
    }

    pub fn fruit_centroid(&self) -> Point3<f64> {
        crate::geometry::centroid(&self.spheres.iter().map(|s| s.center).collect::<Vec<_>>()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rng_seed: u64,
    pub camera: CameraIntrinsics<f64>,
    pub trusses: Vec<SyntheticTruss>,
    pub detections: Vec<Detection<f64>>,
    pub background_depth: f64,
    pub background_sparsity: u32,
    pub pixel_stride: u32,
}

impl SyntheticScene {
    /// Detections (truss box first) belonging to one truss.
    pub fn detections_of(&self, truss_id: u64) -> Vec<Detection<f64>> {
        let fruit_ids: Vec<u64> = self
            .trusses
            .iter()
            .find(|t| t.truss_id == truss_id)
            .map(|t| t.fruit_ids())
            .unwrap_or_default();
        self.detections.iter().filter(|d| d.id == truss_id || fruit_ids.contains(&d.id)).copied().collect()
    }

    /// Renders the depth cloud; `depth_noise` perturbs each ray's depth.
    pub fn render_cloud(&self, mut depth_noise: impl FnMut() -> f64) -> Result<PointCloud<f64>> {
        let spheres: Vec<&FruitSphere<f64>> = self.trusses.iter().flat_map(|t| &t.spheres).collect();
        let k = &self.camera;
        let mut points = Vec::new();
        let mut pixels = Vec::new();
        let mut background_counter = 0u32;
        let step = self.pixel_stride as usize;
        for v in (0..k.height).step_by(step) {
            for u in (0..k.width).step_by(step) {
                let px = Pixel::new(u as f64, v as f64);
                let dir = Point3::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0);
                let hit = spheres.iter().filter_map(|s| ray_sphere(&dir, s)).fold(None, |acc: Option<f64>, t| {
                    Some(acc.map_or(t, |a| a.min(t)))
                });
                let depth = match hit {
                    Some(t) => t,
                    None => {
                        background_counter += 1;
                        if !background_counter.is_multiple_of(self.background_sparsity) {
                            continue;
                        }
                        self.background_depth
                    }
                };
                let z = depth + depth_noise();
                if z <= 0.0 {
                    continue;
                }
                points.push(backproject(px, z, k)?);
                pixels.push(px);
            }
        }
        PointCloud::with_pixels(points, pixels)
    }
}

/// Depth (ray parameter with unit z) of the nearest intersection, if any.
fn ray_sphere(dir: &Point3<f64>, s: &FruitSphere<f64>) -> Option<f64> {
    let a = dir.dot(dir);
    let b = -2.0 * dir.dot(&s.center);
    let c = s.center.dot(&s.center) - s.radius * s.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    (t > 0.0).then_some(t)
}

fn pick_orientation(rng: &mut ChaCha8Rng, weights: &[f64; 5]) -> OrientationClass {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (class, w) in OrientationClass::ALL.iter().zip(weights) {
        if x < *w {
            return *class;
        }
        x -= w;
    }
    *OrientationClass::ALL.iter().zip(weights).rev().find(|(_, w)| **w > 0.0).unwrap().0
}

/// Growth angle from the camera-facing direction, degrees, and a
/// horizontal length scale for the class.
fn growth_for(class: OrientationClass, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    match class {
        OrientationClass::Front => (rng.random_range(-35.0..35.0), 1.0),
        OrientationClass::Right => (rng.random_range(55.0..125.0), 1.0),
        OrientationClass::Left => (rng.random_range(-125.0..-55.0), 1.0),
        OrientationClass::Back => (side * rng.random_range(138.0..150.0), 0.75),
        OrientationClass::Inward => (rng.random_range(165.0..195.0), 1.0),
    }
}

fn maturities_for(rng: &mut ChaCha8Rng, n: usize, terminal: usize, ripe: bool) -> Vec<MaturityStage> {
    use MaturityStage::*;
    let mut m: Vec<MaturityStage> = (0..n)
        .map(|i| {
            if i == terminal {
                [Turning, Ripe, FullyRipe][rng.random_range(0..3)]
            } else {
                [Ripe, FullyRipe][rng.random_range(0..2)]
            }
        })
        .collect();
    if !ripe {
        let i = rng.random_range(0..n);
        m[i] = if i == terminal { GreenMature } else { [GreenMature, Turning][rng.random_range(0..2)] };
    }
    m
}

fn build_truss(
    rng: &mut ChaCha8Rng,
    params: &SceneParams,
    truss_id: u64,
    x_center: f64,
    class: OrientationClass,
) -> Result<SyntheticTruss> {
    let (angle_deg, scale) = growth_for(class, rng);
    let angle = angle_deg.to_radians();
    // theta = atan2(g.x, -g.z)
    let growth = Point3::new(angle.sin(), 0.0, -angle.cos());
    let lateral = Point3::new(-growth.z, 0.0, growth.x);

    let s_cp = rng.random_range(0.025..0.035) * scale;
    let a = rng.random_range(0.5..0.7);
    let droop = Droop { a, b: a / (2.0 * s_cp) };
    let s_fp = 2.0 * s_cp;
    let s_ep = rng.random_range(0.10..0.12) * scale;
    let span = droop.arc_length(s_fp, s_ep);
    let mut offsets = [0.0, s_cp, s_fp, 0.0, 0.0, 0.0, s_ep];
    for (slot, f) in [(3, 0.25), (4, 0.5), (5, 0.75)] {
        offsets[slot] = droop.at_arc_length(s_fp, f * span);
    }

    let sp = Point3::new(
        x_center + rng.random_range(-0.04..0.04),
        rng.random_range(-0.32..-0.22),
        rng.random_range(params.depth_range.0..=params.depth_range.1),
    );
    let along = |s: f64| sp + growth * s - Point3::down() * droop.height(s);
    let keypoints = PedicelKeypoints3::from_positions(offsets.map(along), 1.0)?;

    let n = rng.random_range(params.min_fruits..=params.max_fruits);
    let (r0, r1) = params.fruit_radius;
    let mut spheres = Vec::with_capacity(n);
    for i in 0..n {
        let terminal = i + 1 == n;
        let s = if n == 1 { s_ep } else { s_fp + (s_ep - s_fp) * i as f64 / (n - 1) as f64 };
        let (r, pedicel, side) = if terminal {
            (r0 + (r1 - r0) * 0.2 * rng.random::<f64>(), 0.006, 0.0)
        } else {
            let r = rng.random_range(r0..=r1);
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            (r, rng.random_range(0.015..0.03), sign * (0.6 * r + rng.random_range(0.004..0.012)))
        };
        let center = along(s) + Point3::down() * (pedicel + r) + lateral * side;
        spheres.push(FruitSphere::new(center, r)?);
    }
    let terminal = n - 1;
    let ripe_target = rng.random::<f64>() < params.ripe_fraction;
    let maturities = maturities_for(rng, n, terminal, ripe_target);
    let ripe = truss_maturity(&maturities, terminal)?;

    let centroid = crate::geometry::centroid(&spheres.iter().map(|s| s.center).collect::<Vec<_>>());
    let orientation = classify_orientation(&keypoints, centroid, DEFAULT_INWARD_MARGIN)?;
    Ok(SyntheticTruss {
        truss_id,
        keypoints,
        keypoint_offsets: offsets,
        growth,
        droop,
        spheres,
        maturities,
        terminal,
        ripe,
        orientation,
    })
}

impl SyntheticTruss {
    /// Whether every fruit stays inside the bore, with `margin` to spare,
    /// while the bore axis follows the peduncle from EP to FP and then
    /// moves to put its rim on SP.
    pub fn fits_bore(&self, bore: f64, margin: f64) -> bool {
        let sp = self.keypoints.keypoints[0].position;
        let inward = (self.fruit_centroid() - sp).horizontal().normalized().unwrap_or(self.growth);
        let (s_fp, s_ep) = (self.keypoint_offsets[2], self.keypoint_offsets[6]);
        let mut axes: Vec<Point3<f64>> = (0..=20).map(|i| sp + self.growth * (s_fp + (s_ep - s_fp) * i as f64 / 20.0)).collect();
        let rim = sp + inward * bore;
        let fp = sp + self.growth * s_fp;
        axes.extend((0..=10).map(|i| fp.lerp(&rim, i as f64 / 10.0)));
        axes.iter().all(|a| {
            self.spheres.iter().all(|s| (s.center - *a).horizontal().norm() + s.radius <= bore - margin)
        })
    }
}

/// Every fruit center ray hits its own fruit first.
fn centers_visible(all: &[&FruitSphere<f64>]) -> bool {
    all.iter().all(|s| {
        let dir = s.center / s.center.z;
        let own = ray_sphere(&dir, s);
        all.iter().filter(|o| !std::ptr::eq(**o, *s)).all(|o| match (ray_sphere(&dir, o), own) {
            (Some(t), Some(mine)) => t >= mine,
            _ => true,
        })
    })
}

fn fruit_box(s: &FruitSphere<f64>, k: &CameraIntrinsics<f64>) -> Result<BBox<f64>> {
    let c = project(s.center, k)?;
    let (rx, ry) = (k.fx * s.radius / s.center.z, k.fy * s.radius / s.center.z);
    BBox::new(c.u - rx, c.v - ry, c.u + rx, c.v + ry)
}

fn inside_image(b: &BBox<f64>, k: &CameraIntrinsics<f64>) -> bool {
    b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max < k.width as f64 && b.y_max < k.height as f64
}

fn truss_detections(t: &SyntheticTruss, k: &CameraIntrinsics<f64>, conf: f64) -> Result<Vec<Detection<f64>>> {
    let mut out = Vec::new();
    let mut hull = BBox { x_min: f64::MAX, y_min: f64::MAX, x_max: f64::MIN, y_max: f64::MIN };
    let mut grow = |b: &BBox<f64>| {
        hull.x_min = hull.x_min.min(b.x_min);
        hull.y_min = hull.y_min.min(b.y_min);
        hull.x_max = hull.x_max.max(b.x_max);
        hull.y_max = hull.y_max.max(b.y_max);
    };
    for kp in &t.keypoints.keypoints {
        let p = project(kp.position, k)?;
        grow(&BBox { x_min: p.u, y_min: p.v, x_max: p.u, y_max: p.v });
    }
    for ((s, m), id) in t.spheres.iter().zip(&t.maturities).zip(t.fruit_ids()) {
        let b = fruit_box(s, k)?;
        grow(&b);
        out.push(Detection::fruit(id, b, conf, *m));
    }
    let pad = 6.0;
    let hull = BBox::new(
        (hull.x_min - pad).max(0.0),
        (hull.y_min - pad).max(0.0),
        (hull.x_max + pad).min(k.width as f64 - 1.0),
        (hull.y_max + pad).min(k.height as f64 - 1.0),
    )?;
    out.insert(0, Detection::truss(t.truss_id, hull, conf));
    Ok(out)
}

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = params.camera;
    let spacing = 0.3;
    let first = -spacing * (params.truss_count as f64 - 1.0) / 2.0;
    let mut trusses = Vec::with_capacity(params.truss_count);
    let mut detections = Vec::new();
    for i in 0..params.truss_count {
        let class = pick_orientation(&mut rng, &params.orientation_weights);
        let x = first + spacing * i as f64;
        let truss_id = i as u64 + 1;
        let mut accepted = None;
        for _ in 0..256 {
            let t = build_truss(&mut rng, params, truss_id, x, class)?;
            if t.orientation != class || !t.fits_bore(params.bore_radius, params.bore_margin) {
                continue;
            }
            let mut all: Vec<&FruitSphere<f64>> = trusses.iter().flat_map(|p: &SyntheticTruss| &p.spheres).collect();
            all.extend(&t.spheres);
            if !centers_visible(&all) {
                continue;
            }
            let dets = truss_detections(&t, &k, 0.9)?;
            if dets.iter().skip(1).all(|d| inside_image(&d.bbox, &k)) {
                accepted = Some((t, dets));
                break;
            }
        }
        let (t, dets) = accepted
            .ok_or_else(|| Error::domain(format!("could not place a {} truss in view", class.label())))?;
        trusses.push(t);
        detections.extend(dets);
    }
    Ok(SyntheticScene {
        rng_seed: seed,
        camera: k,
        trusses,
        detections,
        background_depth: params.background_depth,
        background_sparsity: params.background_sparsity,
        pixel_stride: params.pixel_stride,
    })
}
