use serde::{Deserialize, Serialize};

use super::trajectory::{Phase, Trajectory};
use super::{EffectorModel, PlannedTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{curve_normal, ParametricCurve, Point3};
use crate::phenotyping::FruitSphere;
use crate::scalar::Real;

/// First contact found by [`check_collision`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub waypoint: usize,
    pub sphere: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams<T> {
    pub step: T,
    pub max_iters: usize,
    pub clearance: T,
}

impl<T: Real> Default for ShiftParams<T> {
    fn default() -> Self {
        Self { step: T::lit(0.01), max_iters: 10, clearance: T::lit(0.005) }
    }
}

/// Distance from `p` to the tube wall of an effector whose rim center is
/// at `rim`. The wall spans `y` from the rim down to `rim.y + height`;
/// its two edge circles are included.
pub fn wall_distance<T: Real>(p: &Point3<T>, rim: &Point3<T>, effector: &EffectorModel<T>) -> T {
    let d = *p - *rim;
    let radial = d.horizontal().norm() - effector.inner_radius;
    let below = d.y.max(T::zero()).min(effector.height);
    let axial = d.y - below;
    radial.hypot(axial)
}

fn sphere_hits<T: Real>(s: &FruitSphere<T>, rim: &Point3<T>, effector: &EffectorModel<T>, clearance: T) -> bool {
    wall_distance(&s.center, rim, effector) - s.radius < clearance
}

/// Earliest waypoint at which any sphere comes within `clearance` of the
/// effector wall or rim. Spheres inside the bore are fine.
pub fn check_collision<T: Real>(
    traj: &Trajectory<T>,
    spheres: &[FruitSphere<T>],
    effector: &EffectorModel<T>,
    clearance: T,
) -> Option<Violation> {
    traj.waypoints.iter().enumerate().find_map(|(i, w)| {
        spheres
            .iter()
            .position(|s| sphere_hits(s, &w.position, effector, clearance))
            .map(|j| Violation { waypoint: i, sphere: j })
    })
}

/// Pushes offending wrap waypoints off the peduncle curve along its normal
/// until the trajectory is clear.
///
/// Each iteration moves the offending waypoint and its wrap-phase
/// neighbors by `step` along the curve normal at the closest curve
/// parameter. Of the two normal directions the one that opens more room
/// around the offending sphere is taken; ties go to `-normal`.
pub fn shift_waypoints<T: Real>(
    traj: &Trajectory<T>,
    curve: &ParametricCurve<T>,
    spheres: &[FruitSphere<T>],
    effector: &EffectorModel<T>,
    params: &ShiftParams<T>,
) -> Result<Trajectory<T>> {
    if !(params.step > T::zero()) || params.clearance < T::zero() {
        return Err(Error::domain("shift step must be positive and clearance non-negative"));
    }
    let mut out = traj.clone();
    let mut iterations = 0;
    while let Some(v) = check_collision(&out, spheres, effector, params.clearance) {
        if iterations == params.max_iters || out.waypoints[v.waypoint].phase != Phase::Wrap {
            return Err(Error::PlanInfeasible { iterations });
        }
        iterations += 1;
        let here = out.waypoints[v.waypoint].position;
        let t = curve.closest_parameter(&here);
        let normal = curve_normal(curve, t)?;
        let sphere = &spheres[v.sphere];
        let room = |p: Point3<T>| wall_distance(&sphere.center, &p, effector);
        let plus = room(here + normal * params.step);
        let minus = room(here - normal * params.step);
        let delta = if plus > minus { normal * params.step } else { -normal * params.step };

        let lo = v.waypoint.saturating_sub(1);
        let hi = (v.waypoint + 1).min(out.waypoints.len() - 1);
        for i in lo..=hi {
            if out.waypoints[i].phase == Phase::Wrap {
                out.waypoints[i].position += delta;
            }
        }
    }
    Ok(out)
}

/// Runs [`shift_waypoints`] against the curve the plan was built on.
pub fn resolve_collisions<T: Real>(
    plan: &PlannedTrajectory<T>,
    spheres: &[FruitSphere<T>],
    effector: &EffectorModel<T>,
    params: &ShiftParams<T>,
) -> Result<Trajectory<T>> {
    shift_waypoints(&plan.trajectory, &plan.wrap_curve, spheres, effector, params)
}

#[cfg(test)]
mod tests {
    use super::super::trajectory::Waypoint;
    use super::*;
    use crate::geometry::fit_curve;

    fn eff() -> EffectorModel<f64> {
        EffectorModel::default()
    }

    fn wp(p: Point3<f64>, phase: Phase) -> Waypoint<f64> {
        Waypoint { position: p, phase, yaw_deg: 0.0 }
    }

    #[test]
    fn wall_distance_cases() {
        let rim = Point3::new(0.0, 0.0, 0.0);
        let e = eff();
        assert!((wall_distance(&Point3::new(0.0, 0.1, 0.0), &rim, &e) - 0.1).abs() < 1e-12);
        assert!((wall_distance(&Point3::new(0.15, 0.05, 0.0), &rim, &e) - 0.05).abs() < 1e-12);
        // above the rim, off the edge circle
        assert!((wall_distance(&Point3::new(0.13, -0.04, 0.0), &rim, &e) - 0.05).abs() < 1e-12);
        // below the bottom edge
        assert!((wall_distance(&Point3::new(0.1, 0.23, 0.0), &rim, &e) - 0.03).abs() < 1e-12);
    }

    #[test]
    fn far_and_enveloped() {
        let traj = Trajectory { waypoints: vec![wp(Point3::zero(), Phase::Position), wp(Point3::new(0.0, -0.02, 0.0), Phase::Wrap)] };
        let far = FruitSphere::new(Point3::new(1.0, 0.0, 1.0), 0.03).unwrap();
        let inside = FruitSphere::new(Point3::new(0.0, 0.1, 0.0), 0.05).unwrap();
        assert_eq!(check_collision(&traj, &[far, inside], &eff(), 0.01), None);
        let straddle = FruitSphere::new(Point3::new(0.1, 0.1, 0.0), 0.02).unwrap();
        assert_eq!(check_collision(&traj, &[far, straddle], &eff(), 0.01), Some(Violation { waypoint: 0, sphere: 1 }));
    }

    fn line_plan() -> (Trajectory<f64>, ParametricCurve<f64>) {
        let pts: Vec<_> = (0..5).map(|i| Point3::new(0.02 * i as f64, -0.01 * i as f64, 0.0)).collect();
        let curve = fit_curve(&pts).unwrap();
        let wps = curve.sample(8).into_iter().map(|(_, p)| wp(p, Phase::Wrap)).collect();
        (Trajectory { waypoints: wps }, curve)
    }

    #[test]
    fn shallow_violation_resolves() {
        let (traj, curve) = line_plan();
        // sits just above the rim near the middle of the path
        let s = FruitSphere::new(Point3::new(0.14, -0.04, 0.0), 0.017).unwrap();
        let params = ShiftParams::default();
        assert!(check_collision(&traj, &[s], &eff(), params.clearance).is_some());
        let out = shift_waypoints(&traj, &curve, &[s], &eff(), &params).unwrap();
        assert_eq!(check_collision(&out, &[s], &eff(), params.clearance), None);
        assert_eq!(out.waypoints.len(), traj.waypoints.len());
        assert!(out.waypoints.iter().zip(&traj.waypoints).all(|(a, b)| a.phase == b.phase));
    }

    #[test]
    fn no_violation_is_identity() {
        let (traj, curve) = line_plan();
        let out = shift_waypoints(&traj, &curve, &[], &eff(), &ShiftParams::default()).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn oversized_sphere_is_infeasible() {
        let (traj, curve) = line_plan();
        let s = FruitSphere::new(Point3::new(0.04, 0.1, 0.0), 0.12).unwrap();
        let r = shift_waypoints(&traj, &curve, &[s], &eff(), &ShiftParams::default());
        assert!(matches!(r, Err(Error::PlanInfeasible { .. })));
    }
}
