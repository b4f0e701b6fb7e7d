//! Deterministic 60 fps dodge arena.
//!
//! The agent stands on a flat stage and may only wait, dodge (left, right or
//! in place) or shine. A scripted opponent walks into range and throws
//! telegraphed attacks whose timing and aggression scale with its level
//! (1 to 9). Every idle, undamaged frame is worth 1/60 and the episode ends
//! on the first hit.

mod encode;
mod opponent;
mod record;
mod sim;

pub use encode::{encode_state, FEATURE_COUNT};
pub use opponent::{sample_opponent_level, AttackKind, OpponentProfile, MAX_LEVEL, MIN_LEVEL};
pub use record::TrajectoryRecorder;
pub use sim::{apply_frame_skip, perfect_timing_action, ArenaState, OpponentBrain, StepOutcome};

use thiserror::Error;

/// Reward for an idle, undamaged frame.
pub const IDLE_REWARD: f32 = 1.0 / 60.0;
pub const FRAMES_PER_SECOND: u32 = 60;
/// Idle frame counters saturate one below this.
pub const IDLE_CYCLE: u32 = 60;
pub const OPPONENT_HITSTUN_FRAMES: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AgentAction {
    Nothing = 0,
    DodgeLeft = 1,
    DodgeRight = 2,
    DodgeStand = 3,
    Shine = 4,
}

impl AgentAction {
    pub const COUNT: usize = 5;
    pub const ALL: [AgentAction; 5] = [
        AgentAction::Nothing,
        AgentAction::DodgeLeft,
        AgentAction::DodgeRight,
        AgentAction::DodgeStand,
        AgentAction::Shine,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, ArenaError> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(ArenaError::InvalidAction(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ActionState {
    Idle = 0,
    DodgeLeft = 1,
    DodgeRight = 2,
    DodgeStand = 3,
    Shine = 4,
    AttackWindup = 5,
    AttackActive = 6,
    AttackRecover = 7,
    Hitstun = 8,
}

impl ActionState {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn is_dodge(self) -> bool {
        matches!(
            self,
            ActionState::DodgeLeft | ActionState::DodgeRight | ActionState::DodgeStand
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facing {
    Left,
    Right,
}

impl Facing {
    pub fn sign(self) -> f64 {
        match self {
            Facing::Left => -1.0,
            Facing::Right => 1.0,
        }
    }

    /// Direction from `from` toward `to`; keeps `current` when they coincide.
    pub fn toward(from: f64, to: f64, current: Facing) -> Facing {
        if to > from {
            Facing::Right
        } else if to < from {
            Facing::Left
        } else {
            current
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FighterState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub action_state: ActionState,
    pub action_frame: u32,
    pub facing: Facing,
    pub charging: bool,
    pub airborne: bool,
    pub shield: f64,
    pub jumps_used: u8,
    pub hitlag: u32,
    pub damage: f64,
}

impl FighterState {
    pub fn spawn(x: f64, facing: Facing) -> Self {
        Self {
            x,
            y: 0.0,
            vx: 0.0,
            vy: 0.0,
            action_state: ActionState::Idle,
            action_frame: 0,
            facing,
            charging: false,
            airborne: false,
            shield: 60.0,
            jumps_used: 0,
            hitlag: 0,
            damage: 0.0,
        }
    }
}

/// Stage geometry and animation timings. Frame indices are zero-based and
/// inclusive: a dodge issued on some frame is at animation frame 0 on that
/// same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArenaConfig {
    pub dodge_frames: u32,
    pub dodge_invuln_start: u32,
    pub dodge_invuln_end: u32,
    pub side_dodge_distance: f64,
    pub shine_frames: u32,
    pub shine_active_start: u32,
    pub shine_active_end: u32,
    pub shine_radius: f64,
    pub shine_push: f64,
    pub stage_half_width: f64,
    pub offstage_margin: f64,
    pub spawn_x: f64,
    /// Probability that a chosen action is silently replaced by `Nothing`.
    pub frame_skip_p: f64,
    /// Share of episodes played against the top level.
    pub top_level_share: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            dodge_frames: 29,
            dodge_invuln_start: 4,
            dodge_invuln_end: 19,
            side_dodge_distance: 12.0,
            shine_frames: 21,
            shine_active_start: 1,
            shine_active_end: 8,
            shine_radius: 10.0,
            shine_push: 15.0,
            stage_half_width: 85.0,
            offstage_margin: 10.0,
            spawn_x: 40.0,
            frame_skip_p: 0.0,
            top_level_share: 0.7,
        }
    }
}

impl ArenaConfig {
    /// Animation length of an agent action state, `None` for idle.
    pub fn duration(&self, state: ActionState) -> Option<u32> {
        match state {
            ActionState::DodgeLeft | ActionState::DodgeRight | ActionState::DodgeStand => {
                Some(self.dodge_frames)
            }
            ActionState::Shine => Some(self.shine_frames),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        let ok = self.dodge_frames > 0
            && self.dodge_invuln_start <= self.dodge_invuln_end
            && self.dodge_invuln_end < self.dodge_frames
            && self.shine_frames > 0
            && self.shine_active_start <= self.shine_active_end
            && self.shine_active_end < self.shine_frames
            && self.stage_half_width > self.spawn_x
            && (0.0..=1.0).contains(&self.frame_skip_p)
            && (0.0..=1.0).contains(&self.top_level_share);
        if ok {
            Ok(())
        } else {
            Err(ArenaError::BadConfig)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArenaError {
    #[error("opponent level {0} outside 1..=9")]
    LevelOutOfRange(u8),
    #[error("episode already ended; reset before stepping")]
    SteppedTerminal,
    #[error("action index {0} is not one of the five agent actions")]
    InvalidAction(usize),
    #[error("inconsistent arena timings")]
    BadConfig,
}
