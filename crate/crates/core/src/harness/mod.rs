//! Synthetic scenes, harvest episode simulation, report tables and the
//! command-line front end.

pub mod cli;
mod episode;
mod report;
mod scene;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterParams;
use crate::error::Result;
use crate::phenotyping::AssociationParams;
use crate::planning::{EffectorModel, PlanParams, ShiftParams, Workspace};
use crate::pose::DEFAULT_INWARD_MARGIN;

pub use episode::{run_episode, scene_seed, simulate, EpisodeRecord, HarvestPolicy, NoiseModel, Perception, TimeModel};
pub use report::{aggregate_report, render_csv, render_markdown, PoseRow, Ratio, Report, StageCounts, TimeSummary};
pub use scene::{generate_scene, Droop, SceneParams, SyntheticScene, SyntheticTruss};

/// Everything an episode needs besides noise and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scene: SceneParams,
    pub effector: EffectorModel<f64>,
    pub workspace: Workspace<f64>,
    pub plan: PlanParams<f64>,
    pub shift: ShiftParams<f64>,
    pub cluster: ClusterParams<f64>,
    pub association: AssociationParams<f64>,
    pub time: TimeModel,
    pub inward_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            effector: EffectorModel::default(),
            workspace: Workspace::default(),
            plan: PlanParams::default(),
            shift: ShiftParams::default(),
            cluster: ClusterParams::default(),
            association: AssociationParams::default(),
            time: TimeModel::default(),
            inward_margin: DEFAULT_INWARD_MARGIN,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.effector.validate()?;
        self.cluster.validate()?;
        self.time.validate()
    }
}
