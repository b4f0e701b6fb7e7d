use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ActionState, AgentAction, ArenaConfig, ArenaError, AttackKind, Facing, FighterState,
    OpponentProfile, IDLE_CYCLE, IDLE_REWARD, OPPONENT_HITSTUN_FRAMES,
};

const AGENT_HITLAG: u32 = 8;
const OPPONENT_HITLAG: u32 = 4;
const SHINE_DAMAGE: f64 = 2.0;
/// The opponent stops this far inside its attack range.
const RANGE_MARGIN: f64 = 2.0;
/// How far behind the attacker a hitbox still reaches.
const BACK_REACH: f64 = 1.0;

/// Opponent script state that is not part of the observable fighter state.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentBrain {
    /// Attack in progress, or the next one to throw while idle.
    pub attack: AttackKind,
    pub cooldown: u32,
    pub in_range_frames: u32,
    pub attack_connected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaState {
    pub agent: FighterState,
    pub opponent: FighterState,
    pub frame: u32,
    pub opponent_level: u8,
    pub profile: OpponentProfile,
    pub brain: OpponentBrain,
    pub config: ArenaConfig,
    pub terminal: bool,
    shine_landed: bool,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f32,
    pub terminal: bool,
    /// The agent took damage this frame.
    pub hit: bool,
    pub offstage: bool,
}

impl ArenaState {
    pub fn reset(level: u8, seed: u64) -> Result<Self, ArenaError> {
        Self::reset_with(ArenaConfig::default(), level, seed)
    }

    /// Fighters at mirrored spawn points, idle and undamaged.
    pub fn reset_with(config: ArenaConfig, level: u8, seed: u64) -> Result<Self, ArenaError> {
        config.validate()?;
        let profile = OpponentProfile::for_level(level)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attack = profile.sample_attack(&mut rng);
        let cooldown = rng.gen_range(0..=profile.attack_cooldown_range.0);
        Ok(Self {
            agent: FighterState::spawn(-config.spawn_x, Facing::Right),
            opponent: FighterState::spawn(config.spawn_x, Facing::Left),
            frame: 0,
            opponent_level: level,
            profile,
            brain: OpponentBrain {
                attack,
                cooldown,
                in_range_frames: 0,
                attack_connected: false,
            },
            config,
            terminal: false,
            shine_landed: false,
            rng,
        })
    }

    pub fn agent_invulnerable(&self) -> bool {
        self.agent.action_state.is_dodge()
            && (self.config.dodge_invuln_start..=self.config.dodge_invuln_end)
                .contains(&self.agent.action_frame)
    }

    pub fn agent_is_free(&self) -> bool {
        self.agent.action_state == ActionState::Idle
    }

    /// Advances exactly one frame.
    pub fn step(&mut self, action: AgentAction) -> Result<StepOutcome, ArenaError> {
        if self.terminal {
            return Err(ArenaError::SteppedTerminal);
        }
        self.advance_agent(action);
        self.advance_opponent();
        self.resolve_shine();
        let hit = self.resolve_attack();
        let limit = self.config.stage_half_width + self.config.offstage_margin;
        let offstage = self.agent.x.abs() > limit;
        self.frame += 1;
        self.terminal = hit || offstage;
        let reward = if self.agent.action_state == ActionState::Idle && self.agent.damage == 0.0 {
            IDLE_REWARD
        } else {
            0.0
        };
        Ok(StepOutcome {
            reward,
            terminal: self.terminal,
            hit,
            offstage,
        })
    }

    fn advance_agent(&mut self, action: AgentAction) {
        let cfg = &self.config;
        let a = &mut self.agent;
        if a.action_state == ActionState::Idle {
            let next = match action {
                AgentAction::Nothing => None,
                AgentAction::DodgeLeft => Some(ActionState::DodgeLeft),
                AgentAction::DodgeRight => Some(ActionState::DodgeRight),
                AgentAction::DodgeStand => Some(ActionState::DodgeStand),
                AgentAction::Shine => Some(ActionState::Shine),
            };
            match next {
                Some(state) => {
                    a.action_state = state;
                    a.action_frame = 0;
                    self.shine_landed = false;
                }
                None => a.action_frame = (a.action_frame + 1).min(IDLE_CYCLE - 1),
            }
        } else {
            // Mid-animation: the input is ignored.
            a.action_frame += 1;
            if cfg.duration(a.action_state).is_some_and(|d| a.action_frame >= d) {
                a.action_state = ActionState::Idle;
                a.action_frame = 0;
            }
        }
        let per_frame = cfg.side_dodge_distance / f64::from(cfg.dodge_frames);
        a.vx = match a.action_state {
            ActionState::DodgeLeft => -per_frame,
            ActionState::DodgeRight => per_frame,
            _ => 0.0,
        };
        a.x += a.vx;
        if a.action_state == ActionState::Idle {
            a.facing = Facing::toward(a.x, self.opponent.x, a.facing);
        }
    }

    fn advance_opponent(&mut self) {
        let profile = &self.profile;
        let brain = &mut self.brain;
        let o = &mut self.opponent;
        let agent_x = self.agent.x;
        o.hitlag = o.hitlag.saturating_sub(1);
        match o.action_state {
            ActionState::Idle => {
                o.facing = Facing::toward(o.x, agent_x, o.facing);
                o.action_frame = (o.action_frame + 1).min(IDLE_CYCLE - 1);
                brain.cooldown = brain.cooldown.saturating_sub(1);
                let dist = (agent_x - o.x).abs();
                let want = brain.attack.range() - RANGE_MARGIN;
                if dist > want {
                    let stride = profile.approach_speed.min(dist - want);
                    o.vx = o.facing.sign() * stride;
                    o.x = (o.x + o.vx)
                        .clamp(-self.config.stage_half_width, self.config.stage_half_width);
                    brain.in_range_frames = 0;
                } else {
                    o.vx = 0.0;
                    brain.in_range_frames += 1;
                    if brain.cooldown == 0 && brain.in_range_frames >= profile.reaction_delay {
                        o.action_state = ActionState::AttackWindup;
                        o.action_frame = 0;
                        o.charging = brain.attack == AttackKind::Thrust;
                    }
                }
            }
            ActionState::AttackWindup => {
                o.action_frame += 1;
                if o.action_frame >= profile.telegraph_frames {
                    o.action_state = ActionState::AttackActive;
                    o.action_frame = 0;
                    o.charging = false;
                    brain.attack_connected = false;
                }
            }
            ActionState::AttackActive => {
                o.action_frame += 1;
                if o.action_frame >= brain.attack.active_frames() {
                    o.action_state = ActionState::AttackRecover;
                    o.action_frame = 0;
                }
            }
            ActionState::AttackRecover => {
                o.action_frame += 1;
                if o.action_frame >= brain.attack.recover_frames() {
                    self.to_neutral(false);
                }
            }
            ActionState::Hitstun => {
                o.action_frame += 1;
                if o.action_frame >= OPPONENT_HITSTUN_FRAMES {
                    self.to_neutral(true);
                }
            }
            // The opponent never dodges or shines.
            _ => unreachable!("opponent in agent-only state"),
        }
    }

    /// Opponent back to idle with a fresh cooldown and next attack.
    fn to_neutral(&mut self, after_hitstun: bool) {
        let o = &mut self.opponent;
        o.action_state = ActionState::Idle;
        o.action_frame = 0;
        o.vx = 0.0;
        o.charging = false;
        self.brain.in_range_frames = 0;
        self.brain.cooldown = if after_hitstun {
            self.profile.attack_cooldown_range.0
        } else {
            self.profile.sample_cooldown(&mut self.rng)
        };
        self.brain.attack = self.profile.sample_attack(&mut self.rng);
    }

    fn resolve_shine(&mut self) {
        let cfg = &self.config;
        let a = &self.agent;
        let active = a.action_state == ActionState::Shine
            && (cfg.shine_active_start..=cfg.shine_active_end).contains(&a.action_frame);
        if !active || self.shine_landed {
            return;
        }
        let dx = self.opponent.x - a.x;
        if dx.abs() > cfg.shine_radius {
            return;
        }
        let o = &mut self.opponent;
        if o.action_state == ActionState::AttackActive && self.brain.attack == AttackKind::Grab {
            return;
        }
        let dir = if dx == 0.0 { a.facing.sign() } else { dx.signum() };
        o.x = (o.x + dir * cfg.shine_push).clamp(-cfg.stage_half_width, cfg.stage_half_width);
        o.vx = 0.0;
        o.action_state = ActionState::Hitstun;
        o.action_frame = 0;
        o.charging = false;
        o.hitlag = OPPONENT_HITLAG;
        o.damage += SHINE_DAMAGE;
        self.shine_landed = true;
    }

    fn resolve_attack(&mut self) -> bool {
        let o = &self.opponent;
        if o.action_state != ActionState::AttackActive || self.brain.attack_connected {
            return false;
        }
        let dx = self.agent.x - o.x;
        let in_front = dx * o.facing.sign() >= -BACK_REACH;
        if dx.abs() > self.brain.attack.range() || !in_front || self.agent_invulnerable() {
            return false;
        }
        self.brain.attack_connected = true;
        let a = &mut self.agent;
        a.damage += self.brain.attack.damage();
        a.hitlag = AGENT_HITLAG;
        a.action_state = ActionState::Hitstun;
        a.action_frame = 0;
        a.vx = 0.0;
        true
    }

    /// Puts the opponent next to the agent in the windup of `attack`, with
    /// its active frames starting `frames_until_active` frames from now.
    /// Used to script hit scenarios.
    pub fn force_opponent_attack(&mut self, attack: AttackKind, frames_until_active: u32) {
        let w = self.profile.telegraph_frames;
        let until = frames_until_active.clamp(1, w);
        let side = if self.agent.x <= 0.0 { 1.0 } else { -1.0 };
        let o = &mut self.opponent;
        o.x = self.agent.x + side * (attack.range() / 2.0);
        o.facing = Facing::toward(o.x, self.agent.x, o.facing);
        o.vx = 0.0;
        o.action_state = ActionState::AttackWindup;
        // The opponent advances before hits are resolved, so after `until`
        // more frames it sits on active frame 0.
        o.action_frame = w - until;
        o.charging = attack == AttackKind::Thrust;
        self.brain.attack = attack;
        self.brain.attack_connected = false;
    }
}

/// Replaces the action by `Nothing` with probability `p_drop`.
pub fn apply_frame_skip(action: AgentAction, p_drop: f64, rng: &mut impl Rng) -> AgentAction {
    if p_drop > 0.0 && rng.gen::<f64>() < p_drop {
        AgentAction::Nothing
    } else {
        action
    }
}

/// Scripted policy that reads the opponent's telegraph and stand-dodges so
/// the whole active window lands inside the invulnerability frames.
pub fn perfect_timing_action(st: &ArenaState) -> AgentAction {
    let o = &st.opponent;
    if !st.agent_is_free() || o.action_state != ActionState::AttackWindup {
        return AgentAction::Nothing;
    }
    let cfg = &st.config;
    let w = st.profile.telegraph_frames as i64;
    let active = st.brain.attack.active_frames() as i64;
    // Dodging on windup frame f puts active frames at dodge frames
    // w - f .. w - f + active - 1.
    let earliest = w + active - 1 - cfg.dodge_invuln_end as i64;
    let latest = w - cfg.dodge_invuln_start as i64;
    let f = o.action_frame as i64;
    if f >= earliest && f <= latest {
        AgentAction::DodgeStand
    } else {
        AgentAction::Nothing
    }
}
