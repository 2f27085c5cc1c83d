use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// The effector pushed the truss out of place.
    CollisionDisplacement,
    /// SP was missed by the blade slot.
    PoseError,
    /// No collision-free path within the effector's limits.
    EffectorLimit,
    Unreachable,
}

impl FailureReason {
    pub fn label(self) -> &'static str {
        match self {
            FailureReason::CollisionDisplacement => "collision_displacement",
            FailureReason::PoseError => "pose_error",
            FailureReason::EffectorLimit => "effector_limit",
            FailureReason::Unreachable => "unreachable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarvestState {
    Idle,
    Positioning,
    Wrapping,
    ApproachingSp,
    Cutting,
    Severed,
    Failed(FailureReason),
}

impl HarvestState {
    pub fn is_terminal(self) -> bool {
        matches!(self, HarvestState::Severed | HarvestState::Failed(_))
    }
}

impl fmt::Display for HarvestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarvestState::Failed(r) => write!(f, "failed({})", r.label()),
            other => write!(f, "{}", format!("{other:?}").to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HarvestEvent<T> {
    Start,
    PositionReached,
    WrapComplete,
    SpReached,
    /// Rotation finished with SP `sp_offset` meters from the slot center.
    CutFinished { sp_offset: T, slot_tolerance: T },
    Fail(FailureReason),
}

impl<T> HarvestEvent<T> {
    fn name(&self) -> &'static str {
        match self {
            HarvestEvent::Start => "start",
            HarvestEvent::PositionReached => "position_reached",
            HarvestEvent::WrapComplete => "wrap_complete",
            HarvestEvent::SpReached => "sp_reached",
            HarvestEvent::CutFinished { .. } => "cut_finished",
            HarvestEvent::Fail(_) => "fail",
        }
    }
}

/// Transition table of a single harvest attempt.
pub fn step_harvest<T: Real>(state: HarvestState, event: HarvestEvent<T>) -> Result<HarvestState> {
    use HarvestEvent as E;
    use HarvestState as S;
    let next = match (state, event) {
        (S::Idle, E::Start) => S::Positioning,
        (S::Positioning, E::PositionReached) => S::Wrapping,
        (S::Wrapping, E::WrapComplete) => S::ApproachingSp,
        (S::ApproachingSp, E::SpReached) => S::Cutting,
        (S::Cutting, E::CutFinished { sp_offset, slot_tolerance }) => {
            if sp_offset <= slot_tolerance {
                S::Severed
            } else {
                S::Failed(FailureReason::PoseError)
            }
        }
        (s, E::Fail(reason)) if !s.is_terminal() => S::Failed(reason),
        (s, e) => return Err(Error::Protocol { state: s.to_string(), event: e.name().to_string() }),
    };
    Ok(next)
}

/// Owned harvest state with a transition log.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestMachine {
    state: HarvestState,
    history: Vec<HarvestState>,
}

impl Default for HarvestMachine {
    fn default() -> Self {
        Self::new()
    }
}

impl HarvestMachine {
    pub fn new() -> Self {
        Self { state: HarvestState::Idle, history: vec![HarvestState::Idle] }
    }

    pub fn state(&self) -> HarvestState {
        self.state
    }

    pub fn history(&self) -> &[HarvestState] {
        &self.history
    }

    pub fn fire<T: Real>(&mut self, event: HarvestEvent<T>) -> Result<HarvestState> {
        self.state = step_harvest(self.state, event)?;
        self.history.push(self.state);
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type E = HarvestEvent<f64>;

    #[test]
    fn nominal_walk() {
        let mut m = HarvestMachine::new();
        m.fire(E::Start).unwrap();
        m.fire(E::PositionReached).unwrap();
        m.fire(E::WrapComplete).unwrap();
        m.fire(E::SpReached).unwrap();
        let end = m.fire(E::CutFinished { sp_offset: 0.004, slot_tolerance: 0.01 }).unwrap();
        assert_eq!(end, HarvestState::Severed);
        assert_eq!(m.history().len(), 6);
    }

    #[test]
    fn missed_slot() {
        let s = step_harvest(HarvestState::Cutting, E::CutFinished { sp_offset: 0.011, slot_tolerance: 0.01 }).unwrap();
        assert_eq!(s, HarvestState::Failed(FailureReason::PoseError));
    }

    #[test]
    fn illegal_events() {
        assert!(matches!(step_harvest(HarvestState::Idle, E::WrapComplete), Err(Error::Protocol { .. })));
        assert!(step_harvest(HarvestState::Severed, E::Fail(FailureReason::Unreachable)).is_err());
        assert_eq!(
            step_harvest(HarvestState::Wrapping, E::Fail(FailureReason::CollisionDisplacement)).unwrap(),
            HarvestState::Failed(FailureReason::CollisionDisplacement)
        );
    }
}
