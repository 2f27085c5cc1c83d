//! Pedicel keypoints, OKS evaluation, sigma calibration and truss
//! orientation.

use std::fmt::Debug;

use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pixel, Point3};
use crate::scalar::Real;

/// The seven peduncle keypoints, in order from the main stem to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeypointName {
    /// Junction with the main stem; the cut point.
    Sp,
    /// Maximum curvature of the peduncle.
    Cp,
    /// First fruit petiole junction.
    Fp,
    Qp,
    Mp,
    Tqp,
    /// End of the peduncle.
    Ep,
}

impl KeypointName {
    pub const ALL: [KeypointName; 7] = [
        KeypointName::Sp,
        KeypointName::Cp,
        KeypointName::Fp,
        KeypointName::Qp,
        KeypointName::Mp,
        KeypointName::Tqp,
        KeypointName::Ep,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            KeypointName::Sp => "SP",
            KeypointName::Cp => "CP",
            KeypointName::Fp => "FP",
            KeypointName::Qp => "QP",
            KeypointName::Mp => "MP",
            KeypointName::Tqp => "TQP",
            KeypointName::Ep => "EP",
        }
    }
}

/// COCO-style three-state visibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Visibility {
    Absent = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn is_labeled(self) -> bool {
        self != Visibility::Absent
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Visibility::Absent),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }
}

/// Coordinate space a keypoint set lives in (image pixels or camera-frame meters).
pub trait KeypointCoord: Copy + Debug + PartialEq {
    type Scalar: Real;
    fn distance_squared_to(&self, other: &Self) -> Self::Scalar;
    fn scaled(&self, factor: Self::Scalar) -> Self;
}

impl<T: Real> KeypointCoord for Pixel<T> {
    type Scalar = T;
    fn distance_squared_to(&self, other: &Self) -> T {
        self.distance_squared(other)
    }
    fn scaled(&self, f: T) -> Self {
        Pixel::new(self.u * f, self.v * f)
    }
}

impl<T: Real> KeypointCoord for Point3<T> {
    type Scalar = T;
    fn distance_squared_to(&self, other: &Self) -> T {
        self.distance_squared(other)
    }
    fn scaled(&self, f: T) -> Self {
        *self * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<P> {
    pub position: P,
    pub visibility: Visibility,
}

impl<P> Keypoint<P> {
    pub fn visible(position: P) -> Self {
        Self { position, visibility: Visibility::Visible }
    }

    pub fn absent(position: P) -> Self {
        Self { position, visibility: Visibility::Absent }
    }
}

/// Seven named peduncle keypoints plus optional fruit keypoints.
/// `object_scale` is the truss bounding-box area in px².
#[derive(Debug, Clone, PartialEq)]
pub struct PedicelKeypointSet<P: KeypointCoord> {
    pub keypoints: [Keypoint<P>; 7],
    /// Carried through untouched; not used by OKS.
    pub fruit_keypoints: Vec<Keypoint<P>>,
    pub object_scale: P::Scalar,
}

pub type PedicelKeypoints2<T> = PedicelKeypointSet<Pixel<T>>;
pub type PedicelKeypoints3<T> = PedicelKeypointSet<Point3<T>>;

impl<P: KeypointCoord> PedicelKeypointSet<P> {
    pub fn new(keypoints: [Keypoint<P>; 7], object_scale: P::Scalar) -> Result<Self> {
        if !(object_scale > P::Scalar::zero()) || !object_scale.is_finite() {
            return Err(Error::domain(format!("object scale must be positive, got {object_scale}")));
        }
        Ok(Self { keypoints, fruit_keypoints: Vec::new(), object_scale })
    }

    /// All seven keypoints visible.
    pub fn from_positions(positions: [P; 7], object_scale: P::Scalar) -> Result<Self> {
        Self::new(positions.map(Keypoint::visible), object_scale)
    }

    pub fn get(&self, name: KeypointName) -> &Keypoint<P> {
        &self.keypoints[name.index()]
    }

    pub fn get_mut(&mut self, name: KeypointName) -> &mut Keypoint<P> {
        &mut self.keypoints[name.index()]
    }

    /// Position of a labeled (non-absent) keypoint.
    pub fn labeled(&self, name: KeypointName) -> Option<P> {
        let k = self.get(name);
        k.visibility.is_labeled().then_some(k.position)
    }

    pub fn require(&self, name: KeypointName) -> Result<P> {
        self.labeled(name).ok_or(Error::PoseIncomplete(name))
    }

    pub fn labeled_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visibility.is_labeled()).count()
    }
}

/// Per-keypoint OKS tolerance constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaVector<T>(pub [T; 7]);

impl<T: Real> SigmaVector<T> {
    pub const FLOOR: f64 = 1e-3;

    /// Rejects non-positive or non-finite entries and lifts small ones to the floor.
    pub fn new(values: [T; 7]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !(*v > T::zero()) || !v.is_finite() {
                return Err(Error::domain(format!("sigma for {} must be positive, got {v}", KeypointName::ALL[i].label())));
            }
        }
        Ok(Self(values.map(|v| v.max(T::lit(Self::FLOOR)))))
    }

    pub fn uniform(v: T) -> Result<Self> {
        Self::new([v; 7])
    }

    pub fn get(&self, name: KeypointName) -> T {
        self.0[name.index()]
    }
}

/// Object Keypoint Similarity between a prediction and ground truth.
///
/// `exp(-d² / (2 s² k²))` averaged over ground-truth keypoints that are
/// labeled, with `s² = gt.object_scale` and `k = 2 sigma`.
pub fn oks<P: KeypointCoord>(
    pred: &PedicelKeypointSet<P>,
    gt: &PedicelKeypointSet<P>,
    sigmas: &SigmaVector<P::Scalar>,
) -> Result<P::Scalar> {
    let two = P::Scalar::lit(2.0);
    let mut sum = P::Scalar::zero();
    let mut count = 0usize;
    for name in KeypointName::ALL {
        let g = gt.get(name);
        if !g.visibility.is_labeled() {
            continue;
        }
        let d2 = pred.get(name).position.distance_squared_to(&g.position);
        let k = two * sigmas.get(name);
        sum = sum + (-d2 / (two * gt.object_scale * k * k)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(Error::domain("ground truth has no labeled keypoints"));
    }
    Ok(sum / P::Scalar::from_usize_lossy(count))
}

/// Fraction of pairs whose OKS reaches `threshold`.
pub fn accuracy_at<P: KeypointCoord>(
    preds: &[PedicelKeypointSet<P>],
    gts: &[PedicelKeypointSet<P>],
    sigmas: &SigmaVector<P::Scalar>,
    threshold: P::Scalar,
) -> Result<P::Scalar> {
    if preds.len() != gts.len() {
        return Err(Error::domain(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::domain("accuracy needs at least one pair"));
    }
    let mut hits = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if oks(p, g, sigmas)? >= threshold {
            hits += 1;
        }
    }
    Ok(P::Scalar::from_usize_lossy(hits) / P::Scalar::from_usize_lossy(preds.len()))
}

/// Result of sigma calibration; `None` marks a slot with fewer than two samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate<T>(pub [Option<T>; 7]);

impl<T: Real> SigmaEstimate<T> {
    pub fn unestimable(&self) -> Vec<KeypointName> {
        KeypointName::ALL.into_iter().filter(|n| self.0[n.index()].is_none()).collect()
    }

    /// Fills unestimable slots from `defaults`.
    pub fn resolve(&self, defaults: &SigmaVector<T>) -> SigmaVector<T> {
        let mut out = defaults.0;
        for (o, e) in out.iter_mut().zip(self.0) {
            if let Some(v) = e {
                *o = v;
            }
        }
        SigmaVector(out)
    }
}

/// Population standard deviation of scale-normalized annotator errors.
///
/// For every slot, every annotator and every object where both the
/// annotator and the expert labeled the slot, the sample is
/// `|annotator - expert| / sqrt(expert.object_scale)`. Results are
/// floored at [`SigmaVector::FLOOR`].
pub fn estimate_sigmas<P: KeypointCoord>(
    annotator_sets: &[Vec<PedicelKeypointSet<P>>],
    expert_gt: &[PedicelKeypointSet<P>],
) -> Result<SigmaEstimate<P::Scalar>> {
    for (a, set) in annotator_sets.iter().enumerate() {
        if set.len() != expert_gt.len() {
            return Err(Error::domain(format!(
                "annotator {a} has {} objects, expert has {}",
                set.len(),
                expert_gt.len()
            )));
        }
    }
    let floor = P::Scalar::lit(SigmaVector::<P::Scalar>::FLOOR);
    let mut out = [None; 7];
    for name in KeypointName::ALL {
        let mut samples = Vec::new();
        for set in annotator_sets {
            for (ann, exp) in set.iter().zip(expert_gt) {
                if let (Some(a), Some(e)) = (ann.labeled(name), exp.labeled(name)) {
                    samples.push(a.distance_squared_to(&e).sqrt() / exp.object_scale.sqrt());
                }
            }
        }
        if samples.len() < 2 {
            continue;
        }
        let n = P::Scalar::from_usize_lossy(samples.len());
        let mean = samples.iter().copied().sum::<P::Scalar>() / n;
        let var = samples.iter().map(|s| (*s - mean) * (*s - mean)).sum::<P::Scalar>() / n;
        out[name.index()] = Some(var.sqrt().max(floor));
    }
    Ok(SigmaEstimate(out))
}

/// Default manual adjustment: tighten SP and CP, keep FP, loosen the rest.
pub const DEFAULT_SIGMA_MULTIPLIERS: [f64; 7] = [0.5, 0.5, 1.0, 1.5, 1.5, 1.5, 1.5];

pub fn default_multipliers<T: Real>() -> [T; 7] {
    DEFAULT_SIGMA_MULTIPLIERS.map(T::lit)
}

/// Element-wise scaling of sigmas, re-floored.
pub fn adjust_sigmas<T: Real>(sigmas: &SigmaVector<T>, multipliers: &[T; 7]) -> Result<SigmaVector<T>> {
    if let Some(i) = multipliers.iter().position(|m| !(*m > T::zero()) || !m.is_finite()) {
        return Err(Error::domain(format!(
            "multiplier for {} must be positive",
            KeypointName::ALL[i].label()
        )));
    }
    let mut out = sigmas.0;
    for (s, m) in out.iter_mut().zip(multipliers) {
        *s = *s * *m;
    }
    SigmaVector::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationClass {
    Front,
    Right,
    Left,
    Back,
    /// Growing away from the robot into the cultivation trough.
    Inward,
}

impl OrientationClass {
    pub const ALL: [OrientationClass; 5] = [
        OrientationClass::Front,
        OrientationClass::Right,
        OrientationClass::Left,
        OrientationClass::Back,
        OrientationClass::Inward,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OrientationClass::Front => "Front",
            OrientationClass::Right => "Right",
            OrientationClass::Left => "Left",
            OrientationClass::Back => "Back",
            OrientationClass::Inward => "Inward",
        }
    }
}

/// Default depth margin beyond which a truss growing away from the camera counts as inward.
pub const DEFAULT_INWARD_MARGIN: f64 = 0.06;

/// Classifies the horizontal growth direction of a truss.
///
/// The growth vector runs from SP to the fruit centroid (EP when no
/// centroid is given). Its angle `atan2(g.x, -g.z)` is measured from the
/// direction pointing back at the camera. A depth component beyond
/// `inward_margin` away from the camera is `Inward` regardless of angle.
pub fn classify_orientation<T: Real>(
    pose: &PedicelKeypoints3<T>,
    fruit_centroid: Option<Point3<T>>,
    inward_margin: T,
) -> Result<OrientationClass> {
    let sp = pose
        .labeled(KeypointName::Sp)
        .ok_or_else(|| Error::domain("orientation needs the SP keypoint"))?;
    let tip = fruit_centroid
        .or_else(|| pose.labeled(KeypointName::Ep))
        .ok_or_else(|| Error::domain("orientation needs a fruit centroid or the EP keypoint"))?;
    Ok(classify_growth(tip - sp, inward_margin))
}

/// Sector rule on a growth vector; total on finite input.
pub fn classify_growth<T: Real>(g: Point3<T>, inward_margin: T) -> OrientationClass {
    if g.z > inward_margin {
        return OrientationClass::Inward;
    }
    let theta = g.x.atan2(-g.z);
    let quarter = T::FRAC_PI_4();
    let three_quarters = T::lit(3.0) * quarter;
    if theta.abs() <= quarter {
        OrientationClass::Front
    } else if theta > quarter && theta <= three_quarters {
        OrientationClass::Right
    } else if theta >= -three_quarters && theta < -quarter {
        OrientationClass::Left
    } else {
        OrientationClass::Back
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: [(f64, f64); 7], scale: f64) -> PedicelKeypoints2<f64> {
        PedicelKeypointSet::from_positions(points.map(|(u, v)| Pixel::new(u, v)), scale).unwrap()
    }

    fn base() -> PedicelKeypoints2<f64> {
        set([(10.0, 10.0), (12.0, 20.0), (15.0, 30.0), (18.0, 40.0), (20.0, 50.0), (22.0, 60.0), (25.0, 70.0)], 400.0)
    }

    #[test]
    fn identical_is_one() {
        let s = SigmaVector::uniform(0.05).unwrap();
        assert_eq!(oks(&base(), &base(), &s).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_exp_minus_one() {
        let sigmas = SigmaVector::uniform(0.05).unwrap();
        let mut gt = base();
        for name in &KeypointName::ALL[1..] {
            gt.get_mut(*name).visibility = Visibility::Absent;
        }
        // d² = 2 s² k², k = 0.1, s² = 400  =>  d = sqrt(8) = 2.828...
        let d = (2.0f64 * 400.0 * 0.01).sqrt();
        let mut pred = gt.clone();
        pred.get_mut(KeypointName::Sp).position.u += d;
        assert!((oks(&pred, &gt, &sigmas).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn all_absent_is_error() {
        let mut gt = base();
        for k in gt.keypoints.iter_mut() {
            k.visibility = Visibility::Absent;
        }
        assert!(oks(&base(), &gt, &SigmaVector::uniform(0.05).unwrap()).is_err());
    }

    #[test]
    fn occluded_counts() {
        let sigmas = SigmaVector::uniform(0.05).unwrap();
        let mut gt = base();
        gt.get_mut(KeypointName::Cp).visibility = Visibility::Occluded;
        let mut pred = base();
        pred.get_mut(KeypointName::Cp).position.u += 50.0;
        assert!(oks(&pred, &gt, &sigmas).unwrap() < 0.9);
    }

    #[test]
    fn accuracy_examples() {
        let sigmas = SigmaVector::uniform(0.05).unwrap();
        assert_eq!(accuracy_at(&[base(), base()], &[base(), base()], &sigmas, 0.75).unwrap(), 1.0);

        let mut gt = base();
        for name in &KeypointName::ALL[1..] {
            gt.get_mut(*name).visibility = Visibility::Absent;
        }
        let mut off = gt.clone();
        off.get_mut(KeypointName::Sp).position.u += (8.0f64).sqrt();
        let acc = accuracy_at(&[gt.clone(), off, gt.clone()], &[gt.clone(), gt.clone(), gt.clone()], &sigmas, 0.75).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);

        assert!(accuracy_at::<Pixel<f64>>(&[], &[], &sigmas, 0.75).is_err());
        assert!(accuracy_at(&[base()], &[], &sigmas, 0.75).is_err());
    }

    #[test]
    fn sigmas_from_identical_annotators_hit_floor() {
        let est = estimate_sigmas(&[vec![base(), base()], vec![base(), base()]], &[base(), base()]).unwrap();
        for v in est.0 {
            assert_eq!(v, Some(1e-3));
        }
    }

    #[test]
    fn sigma_population_std() {
        // scale 1 => normalized error equals pixel distance
        let expert = set([(0.0, 0.0); 7], 1.0);
        let mut a = expert.clone();
        let mut b = expert.clone();
        a.get_mut(KeypointName::Mp).position.u = 0.1;
        b.get_mut(KeypointName::Mp).position.u = 0.1;
        let est = estimate_sigmas(&[vec![a.clone()], vec![b]], std::slice::from_ref(&expert)).unwrap();
        assert_eq!(est.0[KeypointName::Mp.index()], Some(1e-3));

        let mut c = expert.clone();
        c.get_mut(KeypointName::Mp).position.u = 0.2;
        let zero = expert.clone();
        let est = estimate_sigmas(&[vec![zero], vec![c]], std::slice::from_ref(&expert)).unwrap();
        assert!((est.0[KeypointName::Mp.index()].unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_slot_unestimable() {
        let expert = base();
        let mut a = base();
        a.get_mut(KeypointName::Tqp).visibility = Visibility::Absent;
        let est = estimate_sigmas(&[vec![a.clone()], vec![a]], &[expert]).unwrap();
        assert_eq!(est.unestimable(), vec![KeypointName::Tqp]);
        let resolved = est.resolve(&SigmaVector::uniform(0.07).unwrap());
        assert_eq!(resolved.get(KeypointName::Tqp), 0.07);
    }

    #[test]
    fn misaligned_annotators_rejected() {
        assert!(estimate_sigmas(&[vec![base()]], &[base(), base()]).is_err());
    }

    #[test]
    fn adjust_examples() {
        let s = SigmaVector::new([0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1]).unwrap();
        assert_eq!(adjust_sigmas(&s, &[1.0; 7]).unwrap(), s);
        let adj = adjust_sigmas(&s, &default_multipliers()).unwrap();
        assert!((adj.get(KeypointName::Sp) - 0.02).abs() < 1e-15);
        assert!((adj.get(KeypointName::Ep) - 0.15).abs() < 1e-15);
        let mut bad = [1.0; 7];
        bad[3] = 0.0;
        assert!(adjust_sigmas(&s, &bad).is_err());
        let tiny = SigmaVector::uniform(1.5e-3).unwrap();
        assert_eq!(adjust_sigmas(&tiny, &[0.5; 7]).unwrap().get(KeypointName::Cp), 1e-3);
    }

    #[test]
    fn tighter_sp_sigma_lowers_oks() {
        let s = SigmaVector::uniform(0.05).unwrap();
        let tight = adjust_sigmas(&s, &default_multipliers()).unwrap();
        let mut pred = base();
        pred.get_mut(KeypointName::Sp).position.v += 3.0;
        assert!(oks(&pred, &base(), &tight).unwrap() < oks(&pred, &base(), &s).unwrap());
    }

    #[test]
    fn orientation_examples() {
        let m = DEFAULT_INWARD_MARGIN;
        assert_eq!(classify_growth(Point3::new(0.0, 0.05, -0.1), m), OrientationClass::Front);
        assert_eq!(classify_growth(Point3::new(0.1, 0.0, 0.0), m), OrientationClass::Right);
        assert_eq!(classify_growth(Point3::new(-0.1, 0.0, 0.0), m), OrientationClass::Left);
        assert_eq!(classify_growth(Point3::new(0.1, 0.0, -0.1), m), OrientationClass::Front);
        assert_eq!(classify_growth(Point3::new(-0.1, 0.0, -0.1), m), OrientationClass::Front);
        assert_eq!(classify_growth(Point3::new(0.01, 0.0, 0.04), m), OrientationClass::Back);
        assert_eq!(classify_growth(Point3::new(0.0, 0.0, 0.1), m), OrientationClass::Inward);
    }

    #[test]
    fn orientation_needs_sp_and_tip() {
        let pts = [Point3::new(0.0, 0.0, 1.0); 7];
        let mut pose = PedicelKeypointSet::from_positions(pts, 1.0).unwrap();
        pose.get_mut(KeypointName::Ep).position = Point3::new(0.1, 0.0, 1.0);
        assert_eq!(classify_orientation(&pose, None, 0.06).unwrap(), OrientationClass::Right);
        pose.get_mut(KeypointName::Ep).visibility = Visibility::Absent;
        assert!(classify_orientation(&pose, None, 0.06).is_err());
        assert_eq!(
            classify_orientation(&pose, Some(Point3::new(0.0, 0.1, 0.9)), 0.06).unwrap(),
            OrientationClass::Front
        );
        pose.get_mut(KeypointName::Sp).visibility = Visibility::Absent;
        assert!(classify_orientation(&pose, Some(Point3::new(0.0, 0.1, 0.9)), 0.06).is_err());
    }
}
