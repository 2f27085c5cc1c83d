//! Target selection, bottom-up wrap trajectories, effector collision
//! checks and the harvest state machine.

mod collision;
mod harvest;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::pose::{KeypointName, OrientationClass, PedicelKeypoints3};
use crate::scalar::Real;

pub use collision::{check_collision, resolve_collisions, shift_waypoints, wall_distance, ShiftParams, Violation};
pub use harvest::{step_harvest, FailureReason, HarvestEvent, HarvestMachine, HarvestState};
pub use trajectory::{plan_wrap_trajectory, Phase, PlanParams, PlannedTrajectory, Trajectory, Waypoint};

/// Cylindrical cutter: an open tube whose top rim carries the blade slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorModel<T> {
    /// Bore radius, meters.
    pub inner_radius: T,
    /// Tube length below the rim, meters.
    pub height: T,
    pub blade_slot_width: T,
    pub approach_clearance: T,
    pub rotation_cut_angle: T,
}

impl<T: Real> Default for EffectorModel<T> {
    fn default() -> Self {
        Self {
            inner_radius: T::lit(0.1),
            height: T::lit(0.2),
            blade_slot_width: T::lit(0.02),
            approach_clearance: T::lit(0.01),
            rotation_cut_angle: T::lit(30.0),
        }
    }
}

impl<T: Real> EffectorModel<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.inner_radius, self.height, self.blade_slot_width, self.approach_clearance, self.rotation_cut_angle];
        if all.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::domain("effector dimensions must be positive"));
        }
        if self.blade_slot_width >= self.inner_radius {
            return Err(Error::domain("blade slot must be narrower than the bore radius"));
        }
        Ok(())
    }

    /// SP must lie within this distance of the blade slot center to be cut.
    pub fn slot_tolerance(&self) -> T {
        self.blade_slot_width / T::lit(2.0)
    }
}

/// Arm workspace: an annulus around the base in the horizontal plane and a
/// band of `y` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace<T> {
    pub base: Point3<T>,
    pub min_reach: T,
    pub max_reach: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Real> Default for Workspace<T> {
    fn default() -> Self {
        Self {
            base: Point3::new(T::zero(), T::lit(0.3), T::zero()),
            min_reach: T::lit(0.2),
            max_reach: T::lit(1.2),
            y_min: T::lit(-0.6),
            y_max: T::lit(0.3),
        }
    }
}

impl<T: Real> Workspace<T> {
    pub fn reachable(&self, p: &Point3<T>) -> bool {
        let r = (*p - self.base).horizontal().norm();
        r >= self.min_reach && r <= self.max_reach && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Encoded features of one truss used for target selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFeature<T: Real> {
    pub truss_id: u64,
    pub overall_ripe: bool,
    pub orientation: OrientationClass,
    pub reachable: bool,
    pub fruit_count: usize,
    pub median_volume: T,
    pub pose: PedicelKeypoints3<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy<T> {
    pub rejected_orientations: Vec<OrientationClass>,
    pub min_fruit_count: usize,
    /// Cubic meters.
    pub min_median_volume: T,
    /// Ranking origin; accepted targets are ordered by SP distance to it.
    pub arm_base: Point3<T>,
}

impl<T: Real> Default for FilterPolicy<T> {
    fn default() -> Self {
        Self {
            rejected_orientations: vec![OrientationClass::Left, OrientationClass::Back, OrientationClass::Inward],
            min_fruit_count: 1,
            min_median_volume: T::zero(),
            arm_base: Workspace::default().base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Immature,
    SubparQuality,
    Orientation(OrientationClass),
    Unreachable,
    /// SP is not available to rank or plan against.
    PoseIncomplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T: Real> {
    /// Nearest SP first.
    pub accepted: Vec<TargetFeature<T>>,
    pub rejected: Vec<(u64, RejectReason)>,
}

/// Drops immature, undersized, badly oriented and unreachable trusses and
/// ranks the rest by SP distance to the arm base.
pub fn filter_targets<T: Real>(features: &[TargetFeature<T>], policy: &FilterPolicy<T>) -> FilterOutcome<T> {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for f in features {
        let reason = if !f.overall_ripe {
            Some(RejectReason::Immature)
        } else if f.fruit_count < policy.min_fruit_count || f.median_volume < policy.min_median_volume {
            Some(RejectReason::SubparQuality)
        } else if policy.rejected_orientations.contains(&f.orientation) {
            Some(RejectReason::Orientation(f.orientation))
        } else if !f.reachable {
            Some(RejectReason::Unreachable)
        } else if f.pose.labeled(KeypointName::Sp).is_none() {
            Some(RejectReason::PoseIncomplete)
        } else {
            None
        };
        match reason {
            Some(r) => rejected.push((f.truss_id, r)),
            None => accepted.push(f.clone()),
        }
    }
    let key = |f: &TargetFeature<T>| f.pose.labeled(KeypointName::Sp).unwrap().distance(&policy.arm_base);
    accepted.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap().then(a.truss_id.cmp(&b.truss_id)));
    FilterOutcome { accepted, rejected }
}
