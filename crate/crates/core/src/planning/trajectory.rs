use serde::{Deserialize, Serialize};

use super::EffectorModel;
use crate::error::{Error, Result};
use crate::geometry::{fit_curve, ParametricCurve, Point3};
use crate::phenotyping::FruitSphere;
use crate::pose::{KeypointName, PedicelKeypoints3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Below the target, rising toward EP.
    Position,
    /// Following the peduncle from EP to FP.
    Wrap,
    /// Bringing the rim blade to SP.
    ApproachSp,
    RotateCut,
}

/// Effector rim-center pose. `yaw_deg` is the azimuth of the blade slot
/// around the vertical axis, measured from `+x` toward `+z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint<T> {
    pub position: Point3<T>,
    pub phase: Phase,
    pub yaw_deg: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub waypoints: Vec<Waypoint<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Phases never go backwards and every phase is present.
    pub fn phase_order_ok(&self) -> bool {
        let ordered = self.waypoints.windows(2).all(|w| w[0].phase <= w[1].phase);
        let present = [Phase::Position, Phase::Wrap, Phase::ApproachSp, Phase::RotateCut]
            .iter()
            .all(|p| self.waypoints.iter().any(|w| w.phase == *p));
        ordered && present
    }

    pub fn max_step(&self) -> T {
        self.waypoints
            .windows(2)
            .map(|w| w[0].position.distance(&w[1].position))
            .fold(T::zero(), T::max)
    }

    /// Total travel distance of the rim center.
    pub fn path_length(&self) -> T {
        self.waypoints.windows(2).map(|w| w[0].position.distance(&w[1].position)).sum()
    }

    pub fn phase_length(&self, phase: Phase) -> T {
        self.waypoints
            .windows(2)
            .filter(|w| w[1].phase == phase)
            .map(|w| w[0].position.distance(&w[1].position))
            .sum()
    }

    /// Last waypoint of the SP approach.
    pub fn approach_end(&self) -> Option<&Waypoint<T>> {
        self.waypoints.iter().rev().find(|w| w.phase == Phase::ApproachSp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanParams<T> {
    /// Maximum distance between consecutive waypoints, meters.
    pub max_step: T,
    pub min_wrap_samples: usize,
}

impl<T: Real> Default for PlanParams<T> {
    fn default() -> Self {
        Self { max_step: T::lit(0.05), min_wrap_samples: 8 }
    }
}

/// A trajectory together with the peduncle curve its wrap phase follows.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory<T> {
    pub trajectory: Trajectory<T>,
    /// Fitted through EP, TQP, MP, QP, FP (in that order).
    pub wrap_curve: ParametricCurve<T>,
    /// Blade position at the end of the approach; where SP is expected.
    pub blade_target: Point3<T>,
}

/// Appends points from `from` (exclusive) to `to` (inclusive) spaced at most `max_step`.
fn push_segment<T: Real>(out: &mut Vec<Waypoint<T>>, from: Point3<T>, to: Point3<T>, max_step: T, phase: Phase, yaw: T) {
    let n = (from.distance(&to) / max_step).ceil().to_usize().unwrap_or(1).max(1);
    for i in 1..=n {
        let f = T::from_usize_lossy(i) / T::from_usize_lossy(n);
        out.push(Waypoint { position: from.lerp(&to, f), phase, yaw_deg: yaw });
    }
}

/// Bottom-up wrapping trajectory.
///
/// Starts directly below EP with the rim below the lowest fruit (and EP)
/// by the tube height plus the approach clearance, rises to EP, follows
/// the peduncle curve EP→TQP→MP→QP→FP, moves the rim so that its blade
/// slot sits on SP, and finally rotates by the cut angle.
pub fn plan_wrap_trajectory<T: Real>(
    pose: &PedicelKeypoints3<T>,
    spheres: &[FruitSphere<T>],
    effector: &EffectorModel<T>,
    params: &PlanParams<T>,
) -> Result<PlannedTrajectory<T>> {
    effector.validate()?;
    if !(params.max_step > T::zero()) {
        return Err(Error::domain("max step must be positive"));
    }
    let sp = pose.require(KeypointName::Sp)?;
    let fp = pose.require(KeypointName::Fp)?;
    let qp = pose.require(KeypointName::Qp)?;
    let mp = pose.require(KeypointName::Mp)?;
    let tqp = pose.require(KeypointName::Tqp)?;
    let ep = pose.require(KeypointName::Ep)?;

    let curve = fit_curve(&[ep, tqp, mp, qp, fp])?;

    // horizontal direction from SP into the truss body
    let body = crate::geometry::centroid(&spheres.iter().map(|s| s.center).collect::<Vec<_>>()).unwrap_or(fp);
    let inward = (body - sp)
        .horizontal()
        .normalized()
        .or_else(|| (fp - sp).horizontal().normalized())
        .unwrap_or(Point3::new(T::zero(), T::zero(), -T::one()));
    let blade_dir = -inward;
    let yaw = blade_dir.z.atan2(blade_dir.x).to_degrees();

    let lowest = spheres.iter().map(|s| s.bottom_y()).fold(ep.y, T::max);
    let start = Point3::new(ep.x, lowest + effector.height + effector.approach_clearance, ep.z);

    let mut wps = vec![Waypoint { position: start, phase: Phase::Position, yaw_deg: yaw }];
    // rise to just below EP; EP itself opens the wrap phase
    let n_rise = (start.distance(&ep) / params.max_step).ceil().to_usize().unwrap_or(1).max(1);
    for i in 1..n_rise {
        let f = T::from_usize_lossy(i) / T::from_usize_lossy(n_rise);
        wps.push(Waypoint { position: start.lerp(&ep, f), phase: Phase::Position, yaw_deg: yaw });
    }

    let by_length = (curve.length() / params.max_step).ceil().to_usize().unwrap_or(0) + 1;
    let samples = by_length.max(params.min_wrap_samples).max(2);
    for (_, p) in curve.sample(samples) {
        wps.push(Waypoint { position: p, phase: Phase::Wrap, yaw_deg: yaw });
    }

    let rim_target = sp + inward * effector.inner_radius;
    push_segment(&mut wps, fp, rim_target, params.max_step, Phase::ApproachSp, yaw);

    let cut_yaw = yaw + effector.rotation_cut_angle;
    wps.push(Waypoint { position: rim_target, phase: Phase::RotateCut, yaw_deg: cut_yaw });

    Ok(PlannedTrajectory { trajectory: Trajectory { waypoints: wps }, wrap_curve: curve, blade_target: sp })
}
