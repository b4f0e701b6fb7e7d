use rand::Rng;

use super::ArenaError;

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    /// Long reach, slow to recover.
    Thrust,
    Slash,
    /// Short reach; connects through an active shine.
    Grab,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Thrust, AttackKind::Slash, AttackKind::Grab];

    pub fn range(self) -> f64 {
        match self {
            AttackKind::Thrust => 28.0,
            AttackKind::Slash => 18.0,
            AttackKind::Grab => 9.0,
        }
    }

    pub fn active_frames(self) -> u32 {
        match self {
            AttackKind::Thrust => 4,
            AttackKind::Slash => 3,
            AttackKind::Grab => 2,
        }
    }

    pub fn recover_frames(self) -> u32 {
        match self {
            AttackKind::Thrust => 20,
            AttackKind::Slash => 16,
            AttackKind::Grab => 24,
        }
    }

    pub fn damage(self) -> f64 {
        match self {
            AttackKind::Thrust => 13.0,
            AttackKind::Slash => 10.0,
            AttackKind::Grab => 8.0,
        }
    }
}

/// Behaviour parameters of the scripted opponent at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentProfile {
    pub level: u8,
    /// Frames the opponent waits in range before committing to an attack.
    pub reaction_delay: u32,
    /// Inclusive range of the idle cooldown drawn after each attack.
    pub attack_cooldown_range: (u32, u32),
    pub approach_speed: f64,
    /// Probabilities of thrust, slash and grab.
    pub attack_mix: [f64; 3],
    pub telegraph_frames: u32,
}

impl OpponentProfile {
    pub fn for_level(level: u8) -> Result<Self, ArenaError> {
        if !(MIN_LEVEL..=MAX_LEVEL).contains(&level) {
            return Err(ArenaError::LevelOutOfRange(level));
        }
        let t = f64::from(level - 1) / 8.0;
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        let cooldown_min = lerp(90.0, 20.0).round() as u32;
        let cooldown_span = lerp(60.0, 30.0).round() as u32;
        let thrust = lerp(0.5, 0.3);
        let grab = lerp(0.1, 0.3);
        Ok(Self {
            level,
            reaction_delay: lerp(24.0, 4.0).round() as u32,
            attack_cooldown_range: (cooldown_min, cooldown_min + cooldown_span),
            approach_speed: lerp(0.5, 1.4),
            attack_mix: [thrust, 1.0 - thrust - grab, grab],
            telegraph_frames: lerp(20.0, 12.0).round() as u32,
        })
    }

    pub fn sample_attack(&self, rng: &mut impl Rng) -> AttackKind {
        let u: f64 = rng.gen();
        if u < self.attack_mix[0] {
            AttackKind::Thrust
        } else if u < self.attack_mix[0] + self.attack_mix[1] {
            AttackKind::Slash
        } else {
            AttackKind::Grab
        }
    }

    pub fn sample_cooldown(&self, rng: &mut impl Rng) -> u32 {
        let (lo, hi) = self.attack_cooldown_range;
        rng.gen_range(lo..=hi)
    }
}

/// Level for a new training episode: the top level with probability
/// `top_share`, otherwise one of levels 1 to 8 uniformly.
pub fn sample_opponent_level(rng: &mut impl Rng, top_share: f64) -> u8 {
    let u: f64 = rng.gen();
    if u < top_share {
        return MAX_LEVEL;
    }
    let rest = (1.0 - top_share) / f64::from(MAX_LEVEL - 1);
    let idx = ((u - top_share) / rest) as u8;
    (MIN_LEVEL + idx).min(MAX_LEVEL - 1)
}
