mod common;

use proptest::prelude::*;
use truss_harvest::geometry::{fit_curve, Point3};
use truss_harvest::planning::{
    check_collision, filter_targets, shift_waypoints, step_harvest, EffectorModel, FailureReason, FilterPolicy,
    HarvestEvent, HarvestState, Phase, ShiftParams, TargetFeature,
};
use truss_harvest::pose::{OrientationClass, PedicelKeypoints3};
use truss_harvest::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shift_keeps_shape_and_clears_or_reports(seed in 0u64..100_000) {
        let (traj, spheres, clearance) = common::collision_scene(seed);
        let wrap: Vec<Point3<f64>> = traj.waypoints.iter().filter(|w| w.phase == Phase::Wrap).map(|w| w.position).collect();
        let curve = fit_curve(&wrap).unwrap();
        let e = EffectorModel::<f64>::default();
        let params = ShiftParams { clearance, ..ShiftParams::default() };
        match shift_waypoints(&traj, &curve, &spheres, &e, &params) {
            Ok(out) => {
                prop_assert_eq!(out.waypoints.len(), traj.waypoints.len());
                for (a, b) in out.waypoints.iter().zip(&traj.waypoints) {
                    prop_assert_eq!(a.phase, b.phase);
                    prop_assert_eq!(a.yaw_deg, b.yaw_deg);
                    if a.phase != Phase::Wrap {
                        prop_assert_eq!(a.position, b.position);
                    }
                }
                prop_assert!(check_collision(&out, &spheres, &e, clearance).is_none());
            }
            Err(Error::PlanInfeasible { iterations }) => prop_assert!(iterations <= params.max_iters),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

fn orientation() -> impl Strategy<Value = OrientationClass> {
    prop::sample::select(OrientationClass::ALL.to_vec())
}

fn features() -> impl Strategy<Value = Vec<TargetFeature<f64>>> {
    prop::collection::vec(
        (any::<bool>(), orientation(), any::<bool>(), 1usize..8, 0.0f64..1e-4, -0.3f64..0.3, 0.3f64..1.0),
        0..15,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (ripe, orientation, reachable, fruit_count, vol, x, z))| {
                let sp = Point3::new(x, -0.2, z);
                TargetFeature {
                    truss_id: i as u64,
                    overall_ripe: ripe,
                    orientation,
                    reachable,
                    fruit_count,
                    median_volume: vol,
                    pose: PedicelKeypoints3::from_positions([sp; 7], 1.0).unwrap(),
                }
            })
            .collect()
    })
}

fn event() -> impl Strategy<Value = HarvestEvent<f64>> {
    prop_oneof![
        Just(HarvestEvent::Start),
        Just(HarvestEvent::PositionReached),
        Just(HarvestEvent::WrapComplete),
        Just(HarvestEvent::SpReached),
        (0.0f64..0.02).prop_map(|o| HarvestEvent::CutFinished { sp_offset: o, slot_tolerance: 0.01 }),
        Just(HarvestEvent::Fail(FailureReason::CollisionDisplacement)),
    ]
}

proptest! {
    #[test]
    fn filter_partitions_and_ranks(fs in features(), rejected in prop::collection::vec(orientation(), 0..5)) {
        let policy = FilterPolicy { rejected_orientations: rejected, ..FilterPolicy::default() };
        let out = filter_targets(&fs, &policy);
        prop_assert_eq!(out.accepted.len() + out.rejected.len(), fs.len());
        let d = |f: &TargetFeature<f64>| f.pose.keypoints[0].position.distance(&policy.arm_base);
        prop_assert!(out.accepted.windows(2).all(|w| d(&w[0]) <= d(&w[1])));
        for f in &out.accepted {
            prop_assert!(f.overall_ripe && f.reachable && !policy.rejected_orientations.contains(&f.orientation));
        }
    }

    #[test]
    fn stricter_filters_accept_subsets(fs in features(), a in prop::collection::vec(orientation(), 0..3), b in prop::collection::vec(orientation(), 0..3), v in 0.0f64..1e-4) {
        let loose = FilterPolicy { rejected_orientations: a.clone(), ..FilterPolicy::default() };
        let mut both = a;
        both.extend(b);
        let strict = FilterPolicy { rejected_orientations: both, min_median_volume: v, min_fruit_count: 3, ..FilterPolicy::default() };
        let ids = |p: &FilterPolicy<f64>| -> Vec<u64> { filter_targets(&fs, p).accepted.iter().map(|f| f.truss_id).collect() };
        let loose_ids = ids(&loose);
        prop_assert!(ids(&strict).iter().all(|i| loose_ids.contains(i)));
    }

    #[test]
    fn harvest_machine_terminates(events in prop::collection::vec(event(), 0..40)) {
        let mut state = HarvestState::Idle;
        let mut transitions = 0;
        for e in events {
            match step_harvest(state, e) {
                Ok(next) => {
                    prop_assert!(!state.is_terminal());
                    state = next;
                    transitions += 1;
                }
                Err(Error::Protocol { .. }) => {}
                Err(other) => return Err(TestCaseError::fail(other.to_string())),
            }
        }
        prop_assert!(transitions <= 5);
    }
}

#[test]
fn happy_path_reaches_severed() {
    let mut s = HarvestState::Idle;
    for e in [HarvestEvent::<f64>::Start, HarvestEvent::PositionReached, HarvestEvent::WrapComplete, HarvestEvent::SpReached] {
        s = step_harvest(s, e).unwrap();
    }
    let s = step_harvest(s, HarvestEvent::CutFinished { sp_offset: 0.004, slot_tolerance: 0.01 }).unwrap();
    assert_eq!(s, HarvestState::Severed);
    assert!(step_harvest(s, HarvestEvent::<f64>::Fail(FailureReason::PoseError)).is_err());
}
