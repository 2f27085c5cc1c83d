//! Noisy perception, planning and execution of single harvest episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, SyntheticScene, SyntheticTruss};
use super::SimConfig;
use crate::clustering::{adaptive_dbscan, ImageBounds};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::phenotyping::{associate_fruits_2d, build_phenotype, CloudDepth, MaturityStage, TrussPhenotype};
use crate::planning::{
    check_collision, filter_targets, plan_wrap_trajectory, resolve_collisions, step_harvest, FailureReason,
    FilterPolicy, HarvestEvent, HarvestState, Phase, RejectReason, TargetFeature, Trajectory,
};
use crate::pose::{classify_orientation, KeypointName, OrientationClass, PedicelKeypoints3};

/// Perception noise applied to ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Isotropic 3D keypoint noise, meters.
    pub keypoint_sigma: f64,
    /// Per-ray depth noise, meters.
    pub depth_sigma: f64,
    /// Chance that a fruit is reported with a different maturity stage.
    pub maturity_flip_prob: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.keypoint_sigma) || !ok(self.depth_sigma) {
            return Err(Error::domain("noise sigmas must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.maturity_flip_prob) {
            return Err(Error::domain("maturity flip probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Target filter and retry budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestPolicy {
    pub filter: FilterPolicy<f64>,
    pub attempt_limit: usize,
}

impl HarvestPolicy {
    /// Single-truss trials: up to three attempts, only left-facing and
    /// inward trusses skipped.
    pub fn controlled() -> Self {
        let filter = FilterPolicy {
            rejected_orientations: vec![OrientationClass::Left, OrientationClass::Inward],
            ..FilterPolicy::default()
        };
        Self { filter, attempt_limit: 3 }
    }

    /// Continuous operation: one attempt per target, Front and Right only.
    pub fn continuous() -> Self {
        Self { filter: FilterPolicy::default(), attempt_limit: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempt_limit == 0 {
            return Err(Error::domain("attempt limit must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of one target. Stage fields are `None` when the stage was not
/// reached or does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub truss_id: u64,
    pub pose: OrientationClass,
    pub attempted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<RejectReason>,
    #[serde(default)]
    pub attempts: usize,
    #[serde(default)]
    pub sp_identified: Option<bool>,
    #[serde(default)]
    pub wrapped: Option<bool>,
    #[serde(default)]
    pub detached: Option<bool>,
    #[serde(default)]
    pub harvested: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReason>,
    /// Simulated seconds from leaving the start pose to the end of the cut.
    pub time_used: f64,
}

impl EpisodeRecord {
    /// `harvested` implies `wrapped` and `detached`; `detached` needs a wrap.
    pub fn is_consistent(&self) -> bool {
        let harvest_ok = self.harvested != Some(true) || (self.wrapped == Some(true) && self.detached == Some(true));
        let detach_ok = self.detached.is_none() || self.wrapped == Some(true);
        harvest_ok && detach_ok
    }

    fn rejected(truss: &SyntheticTruss, reason: RejectReason) -> Self {
        Self {
            truss_id: truss.truss_id,
            pose: truss.orientation,
            attempted: false,
            rejection: Some(reason),
            attempts: 0,
            sp_identified: None,
            wrapped: None,
            detached: None,
            harvested: None,
            failure: None,
            time_used: 0.0,
        }
    }
}

/// Simulated durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeModel {
    pub perception_s: f64,
    pub position_s: f64,
    pub wrap_s: f64,
    pub approach_s: f64,
    pub cut_s: f64,
    /// Effector travel speed, m/s.
    pub speed: f64,
}

impl Default for TimeModel {
    fn default() -> Self {
        Self { perception_s: 2.0, position_s: 3.0, wrap_s: 5.0, approach_s: 2.0, cut_s: 4.0, speed: 0.1 }
    }
}

impl TimeModel {
    pub fn validate(&self) -> Result<()> {
        let d = [self.perception_s, self.position_s, self.wrap_s, self.approach_s, self.cut_s];
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::domain("durations must be non-negative and speed positive"));
        }
        Ok(())
    }

    fn phase_duration(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Position => self.position_s,
            Phase::Wrap => self.wrap_s,
            Phase::ApproachSp => self.approach_s,
            Phase::RotateCut => self.cut_s,
        }
    }
}

struct NoiseStreams {
    keypoints: ChaCha8Rng,
    depth: ChaCha8Rng,
    maturity: ChaCha8Rng,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseStreams {
    fn new(noise: &NoiseModel, scene_seed: u64, truss_id: u64) -> Self {
        let base = mix(mix(noise.rng_seed, scene_seed), truss_id);
        Self {
            keypoints: ChaCha8Rng::seed_from_u64(mix(base, 1)),
            depth: ChaCha8Rng::seed_from_u64(mix(base, 2)),
            maturity: ChaCha8Rng::seed_from_u64(mix(base, 3)),
        }
    }
}

/// What the robot believes about one truss.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub pose: PedicelKeypoints3<f64>,
    pub phenotype: TrussPhenotype<f64>,
    pub feature: TargetFeature<f64>,
    pub cloud_points: usize,
}

/// Runs the perception chain on a freshly rendered, noisy view of `truss`.
fn perceive(
    scene: &SyntheticScene,
    truss: &SyntheticTruss,
    cfg: &SimConfig,
    noise: &NoiseModel,
    streams: &mut NoiseStreams,
) -> Result<Perception> {
    let depth_rng = &mut streams.depth;
    let cloud = scene.render_cloud(|| noise.depth_sigma * depth_rng.sample::<f64, _>(StandardNormal))?;

    let mut detections = scene.detections_of(truss.truss_id);
    for d in detections.iter_mut().skip(1) {
        let flip = streams.maturity.random::<f64>() < noise.maturity_flip_prob;
        let pick = streams.maturity.random_range(0..3usize);
        if flip {
            let current = d.maturity.unwrap();
            let others: Vec<MaturityStage> = MaturityStage::ALL.into_iter().filter(|m| *m != current).collect();
            d.maturity = Some(others[pick]);
        }
    }
    let truss_det = detections[0];
    let fruits = &detections[1..];

    let association = associate_fruits_2d(fruits, &[truss_det], &cfg.association)?;
    let member_ids = association.assigned_to(truss_det.id);
    let members: Vec<_> = fruits.iter().filter(|f| member_ids.contains(&f.id)).copied().collect();
    if members.is_empty() {
        return Err(Error::EmptyTruss { truss_id: truss_det.id });
    }

    let seeds: Vec<_> = members.iter().map(|f| f.bbox.center()).collect();
    let bounds = ImageBounds::from(&scene.camera);
    let clusters = adaptive_dbscan(&cloud, &truss_det.bbox, &seeds, &cfg.cluster, bounds)?;
    let mut keep: Vec<usize> = clusters.seed_assignments.iter().filter_map(|s| s.cluster).collect();
    keep.sort_unstable();
    keep.dedup();
    let indices: Vec<usize> = keep.iter().flat_map(|c| clusters.members(*c)).collect::<Vec<_>>();
    let mut indices = indices;
    indices.sort_unstable();
    let truss_cloud: PointCloud<f64> = cloud.select(&indices);

    let mut pose = truss.keypoints.clone();
    for kp in pose.keypoints.iter_mut() {
        let mut g = || noise.keypoint_sigma * streams.keypoints.sample::<f64, _>(StandardNormal);
        kp.position += Point3::new(g(), g(), g());
    }

    let depth = CloudDepth::new(&truss_cloud, cfg.cluster.seed_window);
    let phenotype = build_phenotype(&truss_det, &members, Some(&pose), &scene.camera, &depth)?;
    let orientation = classify_orientation(&pose, Some(phenotype.fruit_centroid()), cfg.inward_margin)?;
    let reachable = pose.keypoints.iter().all(|k| cfg.workspace.reachable(&k.position));
    let feature = TargetFeature {
        truss_id: truss.truss_id,
        overall_ripe: phenotype.overall_ripe,
        orientation,
        reachable,
        fruit_count: phenotype.fruit_count,
        median_volume: phenotype.median_volume(),
        pose: pose.clone(),
    };
    Ok(Perception { pose, phenotype, feature, cloud_points: truss_cloud.len() })
}

struct AttemptOutcome {
    sp_identified: bool,
    wrapped: bool,
    detached: Option<bool>,
    failure: Option<FailureReason>,
    time: f64,
}

fn phase_contact(traj: &Trajectory<f64>, phase: Phase, truss: &SyntheticTruss, cfg: &SimConfig) -> bool {
    let part = Trajectory { waypoints: traj.waypoints.iter().filter(|w| w.phase == phase).copied().collect() };
    check_collision(&part, &truss.spheres, &cfg.effector, 0.0).is_some()
}

fn execute(perception: &Perception, truss: &SyntheticTruss, cfg: &SimConfig) -> Result<AttemptOutcome> {
    let true_sp = truss.keypoints.get(KeypointName::Sp).position;
    let seen_sp = perception.pose.require(KeypointName::Sp)?;
    let sp_identified = seen_sp.distance(&true_sp) <= cfg.effector.slot_tolerance();
    let fail_early = |reason| AttemptOutcome {
        sp_identified,
        wrapped: false,
        detached: None,
        failure: Some(reason),
        time: cfg.time.perception_s,
    };

    let spheres = &perception.phenotype.fruit_spheres;
    let plan = plan_wrap_trajectory(&perception.pose, spheres, &cfg.effector, &cfg.plan)?;
    let traj = match resolve_collisions(&plan, spheres, &cfg.effector, &cfg.shift) {
        Ok(t) => t,
        Err(Error::PlanInfeasible { .. }) => return Ok(fail_early(FailureReason::EffectorLimit)),
        Err(e) => return Err(e),
    };
    if !traj.waypoints.iter().all(|w| cfg.workspace.reachable(&w.position)) {
        return Ok(fail_early(FailureReason::Unreachable));
    }

    let mut time = cfg.time.perception_s + cfg.workspace.base.distance(&traj.waypoints[0].position) / cfg.time.speed;
    let spend = |time: &mut f64, phase: Phase| {
        *time += cfg.time.phase_duration(phase) + traj.phase_length(phase) / cfg.time.speed;
    };
    let mut state = step_harvest::<f64>(HarvestState::Idle, HarvestEvent::Start)?;
    let mut wrapped = false;
    let stages = [
        (Phase::Position, HarvestEvent::<f64>::PositionReached),
        (Phase::Wrap, HarvestEvent::WrapComplete),
        (Phase::ApproachSp, HarvestEvent::SpReached),
    ];
    for (phase, done) in stages {
        spend(&mut time, phase);
        let contact = phase_contact(&traj, phase, truss, cfg);
        let event = if contact { HarvestEvent::Fail(FailureReason::CollisionDisplacement) } else { done };
        state = step_harvest(state, event)?;
        wrapped |= phase == Phase::Wrap && !contact;
        if state.is_terminal() {
            break;
        }
    }
    if state == HarvestState::Cutting {
        spend(&mut time, Phase::RotateCut);
        let offset = plan.blade_target.distance(&true_sp);
        let event = HarvestEvent::CutFinished { sp_offset: offset, slot_tolerance: cfg.effector.slot_tolerance() };
        state = step_harvest(state, event)?;
    }
    let failure = match state {
        HarvestState::Failed(r) => Some(r),
        _ => None,
    };
    Ok(AttemptOutcome {
        sp_identified,
        wrapped,
        detached: wrapped.then_some(state == HarvestState::Severed),
        failure,
        time,
    })
}

/// Perceives, filters, plans and executes one truss of a scene.
///
/// Each attempt re-renders the view with fresh noise. The filter decision
/// of the first attempt is final; later attempts only happen after a
/// failure and stop at the first severed peduncle.
pub fn run_episode(
    scene: &SyntheticScene,
    truss: &SyntheticTruss,
    noise: &NoiseModel,
    policy: &HarvestPolicy,
    cfg: &SimConfig,
) -> Result<EpisodeRecord> {
    noise.validate()?;
    policy.validate()?;
    let mut streams = NoiseStreams::new(noise, scene.rng_seed, truss.truss_id);
    let mut record = EpisodeRecord::rejected(truss, RejectReason::PoseIncomplete);
    record.rejection = None;
    record.attempted = true;

    for attempt in 0..policy.attempt_limit {
        let perception = match perceive(scene, truss, cfg, noise, &mut streams) {
            Ok(p) => p,
            Err(Error::EmptyTruss { .. } | Error::SeedResolution { .. } | Error::Domain(_)) if attempt == 0 => {
                return Ok(EpisodeRecord::rejected(truss, RejectReason::PoseIncomplete));
            }
            Err(Error::EmptyTruss { .. } | Error::SeedResolution { .. } | Error::Domain(_)) => {
                record.attempts += 1;
                record.time_used += cfg.time.perception_s;
                record.failure = Some(FailureReason::PoseError);
                continue;
            }
            Err(e) => return Err(e),
        };
        if attempt == 0 {
            let outcome = filter_targets(std::slice::from_ref(&perception.feature), &policy.filter);
            if let Some((_, reason)) = outcome.rejected.first() {
                return Ok(EpisodeRecord::rejected(truss, *reason));
            }
        }
        let result = execute(&perception, truss, cfg)?;
        record.attempts += 1;
        record.time_used += result.time;
        record.sp_identified = Some(result.sp_identified);
        record.wrapped = Some(result.wrapped);
        record.detached = result.detached;
        record.failure = result.failure;
        let severed = result.detached == Some(true);
        record.harvested = Some(severed && truss.ripe);
        if severed {
            break;
        }
    }
    if record.harvested.is_none() {
        record.harvested = Some(false);
        record.wrapped.get_or_insert(false);
        record.sp_identified.get_or_insert(false);
    }
    Ok(record)
}

/// Seed of the `index`-th scene of a simulation run.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    mix(seed, index as u64 + 1)
}

/// One scene per episode; every truss of the scene yields a record.
pub fn simulate(
    seed: u64,
    episodes: usize,
    noise: &NoiseModel,
    policy: &HarvestPolicy,
    cfg: &SimConfig,
) -> Result<Vec<EpisodeRecord>> {
    let params = &cfg.scene;
    let mut records = Vec::with_capacity(episodes * params.truss_count);
    for i in 0..episodes {
        let scene = generate_scene(scene_seed(seed, i), params)?;
        for truss in &scene.trusses {
            let mut r = run_episode(&scene, truss, noise, policy, cfg)?;
            r.truss_id = (i * params.truss_count) as u64 + truss.truss_id;
            records.push(r);
        }
    }
    Ok(records)
}
