//! Fruit-to-truss association, truss maturity, fruit counting and
//! sphere-based size estimation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{
    adaptive_dbscan, median, seed_point_lookup, BBox, ClusterParams, ImageBounds, SeedAssignment,
};
use crate::error::{Error, Result};
use crate::geometry::{backproject, pixel_radius_to_metric, CameraIntrinsics, Point3, PointCloud};
use crate::pose::{KeypointName, PedicelKeypoints3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaturityStage {
    GreenMature,
    Turning,
    Ripe,
    FullyRipe,
}

impl MaturityStage {
    pub const ALL: [MaturityStage; 4] =
        [MaturityStage::GreenMature, MaturityStage::Turning, MaturityStage::Ripe, MaturityStage::FullyRipe];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionClass {
    Truss,
    Fruit,
}

/// One detector output box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub id: u64,
    pub class: DetectionClass,
    pub bbox: BBox<T>,
    pub confidence: T,
    /// Present exactly for fruits.
    pub maturity: Option<MaturityStage>,
}

impl<T: Real> Detection<T> {
    pub fn fruit(id: u64, bbox: BBox<T>, confidence: T, maturity: MaturityStage) -> Self {
        Self { id, class: DetectionClass::Fruit, bbox, confidence, maturity: Some(maturity) }
    }

    pub fn truss(id: u64, bbox: BBox<T>, confidence: T) -> Self {
        Self { id, class: DetectionClass::Truss, bbox, confidence, maturity: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.confidence >= T::zero() && self.confidence <= T::one()) {
            return Err(Error::domain(format!("detection {}: confidence {} outside [0, 1]", self.id, self.confidence)));
        }
        match (self.class, self.maturity) {
            (DetectionClass::Fruit, None) => Err(Error::domain(format!("fruit {} has no maturity", self.id))),
            (DetectionClass::Truss, Some(_)) => Err(Error::domain(format!("truss {} carries a maturity", self.id))),
            _ => Ok(()),
        }
    }
}

/// Sphere approximation of one fruit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FruitSphere<T> {
    pub center: Point3<T>,
    pub radius: T,
    pub volume: T,
}

impl<T: Real> FruitSphere<T> {
    pub fn new(center: Point3<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() || !center.is_finite() {
            return Err(Error::domain(format!("invalid sphere radius {radius}")));
        }
        Ok(Self { center, radius, volume: sphere_volume(radius) })
    }

    /// Highest point of the sphere in `y` (the bottom, since `y` points down).
    pub fn bottom_y(&self) -> T {
        self.center.y + self.radius
    }
}

pub fn sphere_volume<T: Real>(radius: T) -> T {
    T::lit(4.0) / T::lit(3.0) * T::PI() * radius * radius * radius
}

/// Intersection over union of two boxes.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> Result<T> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Overlap score used to decide fruit membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    /// Plain intersection over union.
    Iou,
    /// Share of the fruit box covered by the truss box.
    #[default]
    FruitCoverage,
}

impl OverlapMetric {
    pub fn score<T: Real>(self, fruit: &BBox<T>, truss: &BBox<T>) -> Result<T> {
        match self {
            OverlapMetric::Iou => iou(fruit, truss),
            OverlapMetric::FruitCoverage => {
                fruit.validate()?;
                truss.validate()?;
                Ok(fruit.intersection_area(truss) / fruit.area())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams<T> {
    pub iou_min: T,
    pub metric: OverlapMetric,
}

impl<T: Real> Default for AssociationParams<T> {
    fn default() -> Self {
        Self { iou_min: T::lit(0.5), metric: OverlapMetric::FruitCoverage }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FruitAssignment {
    Assigned(u64),
    /// Two or more trusses pass the threshold; candidates by descending score.
    Ambiguous(Vec<u64>),
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// Fruit id to outcome, ordered by fruit id.
    pub fruits: BTreeMap<u64, FruitAssignment>,
}

impl Association {
    pub fn assigned_to(&self, truss_id: u64) -> Vec<u64> {
        self.fruits
            .iter()
            .filter(|(_, a)| **a == FruitAssignment::Assigned(truss_id))
            .map(|(f, _)| *f)
            .collect()
    }

    pub fn ambiguous(&self) -> Vec<(u64, Vec<u64>)> {
        self.fruits
            .iter()
            .filter_map(|(f, a)| match a {
                FruitAssignment::Ambiguous(c) => Some((*f, c.clone())),
                _ => None,
            })
            .collect()
    }
}

/// 2D association by box overlap: a fruit goes to its best truss when only
/// that truss passes `iou_min`; two or more passing trusses make it ambiguous.
pub fn associate_fruits_2d<T: Real>(
    fruits: &[Detection<T>],
    trusses: &[Detection<T>],
    params: &AssociationParams<T>,
) -> Result<Association> {
    let mut out = BTreeMap::new();
    for f in fruits {
        let mut passing: Vec<(T, u64)> = Vec::new();
        for t in trusses {
            let s = params.metric.score(&f.bbox, &t.bbox)?;
            if s >= params.iou_min {
                passing.push((s, t.id));
            }
        }
        passing.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let outcome = match passing.len() {
            0 => FruitAssignment::Unassigned,
            1 => FruitAssignment::Assigned(passing[0].1),
            _ => FruitAssignment::Ambiguous(passing.into_iter().map(|(_, id)| id).collect()),
        };
        if out.insert(f.id, outcome).is_some() {
            return Err(Error::domain(format!("duplicate fruit id {}", f.id)));
        }
    }
    Ok(Association { fruits: out })
}

/// A candidate truss for an ambiguous fruit, described by the clustering
/// outcome of its uniquely assigned (anchor) fruits.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTruss {
    pub truss_id: u64,
    pub anchor_seeds: Vec<SeedAssignment>,
}

/// Resolves one ambiguous fruit from a clustering run that seeded both the
/// fruit and the anchors of every candidate.
///
/// The fruit goes to the single candidate whose anchors share its cluster.
/// Otherwise (no candidate or several) the candidate whose anchor depth,
/// the median depth of its anchor seed points, lies nearest the fruit seed
/// depth wins; ties go to the lower truss id. An unreached fruit seed stays
/// unassigned.
pub fn disambiguate_3d<T: Real>(
    fruit: &SeedAssignment,
    candidates: &[CandidateTruss],
    cloud: &PointCloud<T>,
) -> FruitAssignment {
    let (Some(cluster), Some(point)) = (fruit.cluster, fruit.point) else {
        return FruitAssignment::Unassigned;
    };
    let sharing: Vec<&CandidateTruss> = candidates
        .iter()
        .filter(|c| c.anchor_seeds.iter().any(|a| a.cluster == Some(cluster)))
        .collect();
    if sharing.len() == 1 {
        return FruitAssignment::Assigned(sharing[0].truss_id);
    }
    let pool: Vec<&CandidateTruss> = if sharing.is_empty() { candidates.iter().collect() } else { sharing };
    let fruit_z = cloud.points()[point].z;
    pool.into_iter()
        .filter_map(|c| {
            let zs: Vec<T> = c.anchor_seeds.iter().filter_map(|a| a.point).map(|i| cloud.points()[i].z).collect();
            (!zs.is_empty()).then(|| ((median(zs) - fruit_z).abs(), c.truss_id))
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .map_or(FruitAssignment::Unassigned, |(_, id)| FruitAssignment::Assigned(id))
}

/// Runs 3D disambiguation for every ambiguous fruit of a 2D association.
///
/// For each ambiguous fruit the cloud is clustered inside the union of the
/// candidate truss boxes, seeded with the fruit center followed by the box
/// centers of each candidate's anchor fruits.
pub fn resolve_ambiguous<T: Real>(
    association: &Association,
    detections: &[Detection<T>],
    cloud: &PointCloud<T>,
    params: &ClusterParams<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Association> {
    let by_id: BTreeMap<u64, &Detection<T>> = detections.iter().map(|d| (d.id, d)).collect();
    let lookup = |id: u64| by_id.get(&id).copied().ok_or_else(|| Error::domain(format!("unknown detection {id}")));
    let mut out = association.clone();

    for (fruit_id, candidates) in association.ambiguous() {
        let fruit = lookup(fruit_id)?;
        let mut region = fruit.bbox;
        let mut seeds = vec![fruit.bbox.center()];
        let mut spans = Vec::new();
        for &truss_id in &candidates {
            let truss = lookup(truss_id)?;
            region = BBox {
                x_min: region.x_min.min(truss.bbox.x_min),
                y_min: region.y_min.min(truss.bbox.y_min),
                x_max: region.x_max.max(truss.bbox.x_max),
                y_max: region.y_max.max(truss.bbox.y_max),
            };
            let start = seeds.len();
            for anchor in association.assigned_to(truss_id) {
                seeds.push(lookup(anchor)?.bbox.center());
            }
            spans.push((truss_id, start..seeds.len()));
        }
        let outcome = match adaptive_dbscan(cloud, &region, &seeds, params, ImageBounds::from(k)) {
            Ok(clusters) => {
                let candidate_trusses: Vec<CandidateTruss> = spans
                    .into_iter()
                    .map(|(truss_id, range)| CandidateTruss {
                        truss_id,
                        anchor_seeds: clusters.seed_assignments[range].to_vec(),
                    })
                    .collect();
                disambiguate_3d(&clusters.seed_assignments[0], &candidate_trusses, cloud)
            }
            Err(Error::SeedResolution { .. }) => FruitAssignment::Unassigned,
            Err(e) => return Err(e),
        };
        out.fruits.insert(fruit_id, outcome);
    }
    Ok(out)
}

/// Terminal fruit of a truss: nearest to EP when a 3D pose is known,
/// otherwise the lowest box in the image. Ties go to the lower id.
pub fn identify_terminal_fruit<T: Real>(
    fruits: &[Detection<T>],
    spheres: &[FruitSphere<T>],
    pose: Option<&PedicelKeypoints3<T>>,
) -> Result<u64> {
    if fruits.is_empty() {
        return Err(Error::domain("no fruits to choose a terminal fruit from"));
    }
    let ep = pose.and_then(|p| p.labeled(KeypointName::Ep));
    match ep {
        Some(ep) if spheres.len() == fruits.len() => Ok(fruits
            .iter()
            .zip(spheres)
            .map(|(f, s)| (s.center.distance(&ep), f.id))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
            .unwrap()
            .1),
        _ => Ok(fruits
            .iter()
            .map(|f| (f.bbox.center().v, f.id))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)))
            .unwrap()
            .1),
    }
}

/// Ripeness rule for a whole truss: the terminal fruit at least turning and
/// every other fruit at least ripe.
pub fn truss_maturity(maturities: &[MaturityStage], terminal_index: usize) -> Result<bool> {
    if terminal_index >= maturities.len() {
        return Err(Error::domain(format!(
            "terminal index {terminal_index} out of range for {} fruits",
            maturities.len()
        )));
    }
    Ok(maturities.iter().enumerate().all(|(i, m)| {
        if i == terminal_index {
            *m >= MaturityStage::Turning
        } else {
            *m >= MaturityStage::Ripe
        }
    }))
}

/// Circle-in-box sphere estimate: pixel radius `(w + h) / 4`, lifted at `depth`.
pub fn estimate_fruit_sphere<T: Real>(fruit: &Detection<T>, depth: T, k: &CameraIntrinsics<T>) -> Result<FruitSphere<T>> {
    let r_px = (fruit.bbox.width() + fruit.bbox.height()) / T::lit(4.0);
    let center = backproject(fruit.bbox.center(), depth, k)?;
    let radius = pixel_radius_to_metric(r_px, depth, k)?;
    FruitSphere::new(center, radius)
}

/// Supplies the depth of a fruit's sphere center.
pub trait DepthSource<T> {
    fn fruit_center_depth(&self, fruit: &Detection<T>, k: &CameraIntrinsics<T>) -> Option<T>;
}

impl<T, F> DepthSource<T> for F
where
    F: Fn(&Detection<T>) -> Option<T>,
{
    fn fruit_center_depth(&self, fruit: &Detection<T>, _k: &CameraIntrinsics<T>) -> Option<T> {
        self(fruit)
    }
}

/// Depth from the median-z point around the fruit box center.
///
/// The camera sees the front surface of the fruit, so by default the
/// surface depth `d` is moved back to the sphere center, `d / (1 - r_px / f)`,
/// which is exact for a sphere whose box matches its projected radius.
#[derive(Debug, Clone, Copy)]
pub struct CloudDepth<'a, T> {
    pub cloud: &'a PointCloud<T>,
    pub window: u32,
    pub surface_correction: bool,
}

impl<'a, T: Real> CloudDepth<'a, T> {
    pub fn new(cloud: &'a PointCloud<T>, window: u32) -> Self {
        Self { cloud, window, surface_correction: true }
    }
}

impl<T: Real> DepthSource<T> for CloudDepth<'_, T> {
    fn fruit_center_depth(&self, fruit: &Detection<T>, k: &CameraIntrinsics<T>) -> Option<T> {
        let surface = seed_point_lookup(&fruit.bbox.center(), self.cloud, self.window)?.z;
        if !self.surface_correction {
            return Some(surface);
        }
        let ratio = (fruit.bbox.width() + fruit.bbox.height()) / T::lit(4.0) / k.mean_focal();
        (ratio < T::one()).then(|| surface / (T::one() - ratio))
    }
}

/// Assembled record for one truss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrussPhenotype<T> {
    pub truss_id: u64,
    pub fruit_ids: Vec<u64>,
    pub fruit_maturities: Vec<MaturityStage>,
    pub terminal_fruit_id: u64,
    pub fruit_spheres: Vec<FruitSphere<T>>,
    pub overall_ripe: bool,
    pub fruit_count: usize,
}

impl<T: Real> TrussPhenotype<T> {
    pub fn terminal_index(&self) -> Option<usize> {
        self.fruit_ids.iter().position(|id| *id == self.terminal_fruit_id)
    }

    /// Recomputes the ripeness verdict from the stored fields.
    pub fn recompute_ripe(&self) -> Result<bool> {
        let idx = self.terminal_index().ok_or_else(|| Error::domain("terminal fruit not among fruits"))?;
        truss_maturity(&self.fruit_maturities, idx)
    }

    pub fn median_volume(&self) -> T {
        median(self.fruit_spheres.iter().map(|s| s.volume).collect())
    }

    pub fn fruit_centroid(&self) -> Point3<T> {
        crate::geometry::centroid(&self.fruit_spheres.iter().map(|s| s.center).collect::<Vec<_>>())
            .unwrap_or_else(Point3::zero)
    }
}

/// Builds the phenotype of one truss from its assigned fruits.
pub fn build_phenotype<T: Real>(
    truss: &Detection<T>,
    fruits: &[Detection<T>],
    pose: Option<&PedicelKeypoints3<T>>,
    k: &CameraIntrinsics<T>,
    depth: &impl DepthSource<T>,
) -> Result<TrussPhenotype<T>> {
    if fruits.is_empty() {
        return Err(Error::EmptyTruss { truss_id: truss.id });
    }
    let mut fruits = fruits.to_vec();
    fruits.sort_by_key(|f| f.id);
    let mut spheres = Vec::with_capacity(fruits.len());
    for f in &fruits {
        f.validate()?;
        if f.class != DetectionClass::Fruit {
            return Err(Error::domain(format!("detection {} is not a fruit", f.id)));
        }
        let z = depth
            .fruit_center_depth(f, k)
            .ok_or_else(|| Error::domain(format!("no depth for fruit {}", f.id)))?;
        spheres.push(estimate_fruit_sphere(f, z, k)?);
    }
    let terminal = identify_terminal_fruit(&fruits, &spheres, pose)?;
    let maturities: Vec<MaturityStage> = fruits.iter().map(|f| f.maturity.unwrap()).collect();
    let terminal_index = fruits.iter().position(|f| f.id == terminal).unwrap();
    Ok(TrussPhenotype {
        truss_id: truss.id,
        fruit_ids: fruits.iter().map(|f| f.id).collect(),
        overall_ripe: truss_maturity(&maturities, terminal_index)?,
        fruit_maturities: maturities,
        terminal_fruit_id: terminal,
        fruit_spheres: spheres,
        fruit_count: fruits.len(),
    })
}

/// Quality grade thresholds, checked in order; the first satisfied row wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTable<T> {
    pub grades: Vec<QualityGrade<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityGrade<T> {
    pub name: String,
    pub min_fruit_count: usize,
    /// Cubic meters.
    pub min_median_volume: T,
}

impl<T: Real> Default for QualityTable<T> {
    fn default() -> Self {
        let row = |name: &str, n, v| QualityGrade { name: name.to_string(), min_fruit_count: n, min_median_volume: T::lit(v) };
        Self { grades: vec![row("A", 5, 4.0e-5), row("B", 3, 2.0e-5), row("C", 1, 0.0)] }
    }
}

impl<T: Real> QualityTable<T> {
    pub fn grade(&self, p: &TrussPhenotype<T>) -> Option<&str> {
        let volume = p.median_volume();
        self.grades
            .iter()
            .find(|g| p.fruit_count >= g.min_fruit_count && volume >= g.min_median_volume)
            .map(|g| g.name.as_str())
    }
}
