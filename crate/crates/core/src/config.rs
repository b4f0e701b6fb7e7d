//! Run configuration: flat `key = value` text, `#` starts a comment.
//!
//! Defaults are the full-scale values; `configs/desk.cfg` holds the
//! single-machine overrides. Every key can also be set from the command line.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::agents::{AgentKind, EpsilonSchedule, TrainConfig};
use crate::arena::{ArenaConfig, FEATURE_COUNT};
use crate::distrib::{Backoff, LearnerSettings};
use crate::nncore::{specs_single, specs_two_stream, LayerSpec};

pub const CONFIG_ECHO_FILE: &str = "config.cfg";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

/// Comma-separated hidden layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',').map(|w| w.trim().parse()).collect::<Result<_, _>>().map(Widths)
    }
}

impl fmt::Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
            /// Keys set explicitly by command-line flags.
            pub cli_keys: BTreeSet<String>,
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self {
                    $( $name: $default, )*
                    cli_keys: BTreeSet::new(),
                }
            }
        }

        impl RunConfig {
            /// Every key in file order.
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name), )*];

            /// First doc line of each key, for `--help`.
            pub fn describe(key: &str) -> &'static str {
                match key {
                    $( stringify!($name) => concat!($($doc, )* ""), )*
                    _ => "",
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
                match key {
                    $( stringify!($name) => self.$name = value.trim().parse().map_err(|_| bad())?, )*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(self.$name.to_string()), )*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    /// dqn, double, dueling or a3c
    agent: AgentKind = AgentKind::DuelingDqn,
    /// discount factor
    gamma: f64 = 0.99,
    /// RMSProp learning rate
    lr: f64 = 0.00025,
    /// RMSProp squared-gradient decay
    rmsprop_decay: f64 = 0.95,
    /// RMSProp stabiliser
    rmsprop_eps: f64 = 1e-6,
    /// transitions per training batch
    batch_size: usize = 32,
    /// replay memory capacity
    replay_capacity: usize = 1_000_000,
    /// transitions held before training starts
    replay_warmup: usize = 1600,
    /// optimizer steps between target network syncs
    target_sync_every: u64 = 10_000,
    /// initial exploration rate
    epsilon_start: f64 = 1.0,
    /// final exploration rate
    epsilon_end: f64 = 0.1,
    /// share of training over which epsilon anneals
    epsilon_anneal_fraction: f64 = 0.25,
    /// entropy bonus weight (a3c)
    entropy_weight: f64 = 0.01,
    /// hidden layer widths (dqn, double)
    hidden_layers: Widths = Widths(vec![128, 256]),
    /// shared layer width (dueling, a3c)
    shared_width: usize = 128,
    /// width of each stream's hidden layer (dueling, a3c)
    stream_width: usize = 512,
    /// total optimizer steps
    total_training_steps: u64 = 200_000,
    /// frames per worker upload
    samples_per_upload: usize = 5400,
    /// optimizer steps per upload
    train_batches_per_upload: usize = 100,
    /// uploads between snapshots
    snapshot_every_uploads: u64 = 15,
    /// sample generators (in-process for train, processes for manager)
    workers: u32 = 50,
    /// frames after which a training episode is cut; 0 for none
    train_episode_cap: u64 = 0,
    /// share of episodes against level 9
    top_level_share: f64 = 0.7,
    /// probability an action is dropped
    frame_skip_p: f64 = 0.0,
    /// dodge animation length
    dodge_frames: u32 = 29,
    /// first invulnerable dodge frame
    dodge_invuln_start: u32 = 4,
    /// last invulnerable dodge frame
    dodge_invuln_end: u32 = 19,
    /// side dodge travel
    side_dodge_distance: f64 = 12.0,
    /// shine animation length
    shine_frames: u32 = 21,
    /// first active shine frame
    shine_active_start: u32 = 1,
    /// last active shine frame
    shine_active_end: u32 = 8,
    /// shine reach
    shine_radius: f64 = 10.0,
    /// opponent push-back on shine
    shine_push: f64 = 15.0,
    /// half the stage width
    stage_half_width: f64 = 85.0,
    /// distance past the edge that still counts as on stage
    offstage_margin: f64 = 10.0,
    /// spawn distance from centre
    spawn_x: f64 = 40.0,
    /// states in the held-out set
    holdout_size: usize = 1000,
    /// evaluation episodes
    eval_episodes: usize = 200,
    /// evaluation opponent level
    eval_level: u8 = 9,
    /// evaluate without exploration
    eval_greedy: bool = false,
    /// manager listen address
    listen_addr: String = "127.0.0.1:7878".to_string(),
    /// manager address for workers
    manager_addr: String = "127.0.0.1:7878".to_string(),
    /// id of this worker process
    worker_id: u32 = 0,
    /// first reconnect delay in milliseconds
    retry_base_ms: u64 = 1000,
    /// longest reconnect delay in milliseconds
    retry_cap_ms: u64 = 60_000,
    /// connection attempts before a worker gives up
    retry_max_attempts: u32 = 8,
    /// master seed
    seed: u64 = 1,
    /// output directory
    run_dir: String = "runs/default".to_string(),
}

const TWO_STREAM_KEYS: [&str; 2] = ["shared_width", "stream_width"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Applies a command-line override and remembers that it was explicit.
    pub fn set_from_cli(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set(key, value)?;
        self.cli_keys.insert(key.to_string());
        Ok(())
    }

    /// The effective configuration in the file format; parsing it back yields
    /// the same values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        let two_stream = matches!(self.agent, AgentKind::DuelingDqn | AgentKind::A3c);
        for key in &self.cli_keys {
            let k = key.as_str();
            if !two_stream && TWO_STREAM_KEYS.contains(&k) {
                return fail(format!("--{} only applies to dueling and a3c agents", kebab(k)));
            }
            if two_stream && k == "hidden_layers" {
                return fail("--hidden-layers only applies to dqn and double agents".into());
            }
            if self.agent != AgentKind::A3c && k == "entropy_weight" {
                return fail("--entropy-weight only applies to the a3c agent".into());
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return fail("lr, rmsprop_decay and rmsprop_eps must be positive (decay below 1)".into());
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return fail("need 0 <= epsilon_end <= epsilon_start <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_anneal_fraction) {
            return fail("epsilon_anneal_fraction outside [0, 1]".into());
        }
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("target_sync_every", self.target_sync_every),
            ("samples_per_upload", self.samples_per_upload as u64),
            ("workers", u64::from(self.workers)),
            ("shared_width", self.shared_width as u64),
            ("stream_width", self.stream_width as u64),
            ("holdout_size", self.holdout_size as u64),
            ("eval_episodes", self.eval_episodes as u64),
            ("retry_max_attempts", u64::from(self.retry_max_attempts)),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{k} must be positive"));
        }
        if self.hidden_layers.0.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if !(1..=9).contains(&self.eval_level) {
            return fail(format!("eval_level {} outside 1..=9", self.eval_level));
        }
        self.arena()
            .validate()
            .or_else(|_| fail("arena timings or probabilities are inconsistent".into()))
    }

    pub fn arena(&self) -> ArenaConfig {
        ArenaConfig {
            dodge_frames: self.dodge_frames,
            dodge_invuln_start: self.dodge_invuln_start,
            dodge_invuln_end: self.dodge_invuln_end,
            side_dodge_distance: self.side_dodge_distance,
            shine_frames: self.shine_frames,
            shine_active_start: self.shine_active_start,
            shine_active_end: self.shine_active_end,
            shine_radius: self.shine_radius,
            shine_push: self.shine_push,
            stage_half_width: self.stage_half_width,
            offstage_margin: self.offstage_margin,
            spawn_x: self.spawn_x,
            frame_skip_p: self.frame_skip_p,
            top_level_share: self.top_level_share,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lr: self.lr,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_eps: self.rmsprop_eps,
            target_sync_every: self.target_sync_every,
            entropy_weight: self.entropy_weight,
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        match self.agent {
            AgentKind::Dqn | AgentKind::DoubleDqn => {
                specs_single(FEATURE_COUNT, &self.hidden_layers.0, crate::arena::AgentAction::COUNT)
            }
            kind => specs_two_stream(
                kind.head(),
                FEATURE_COUNT,
                &[self.shared_width],
                &[self.stream_width],
                crate::arena::AgentAction::COUNT,
            ),
        }
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule::over_fraction(
            self.epsilon_start,
            self.epsilon_end,
            self.total_training_steps,
            self.epsilon_anneal_fraction,
        )
    }

    pub fn learner_settings(&self, run_dir: Option<PathBuf>) -> LearnerSettings {
        LearnerSettings {
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            replay_warmup: self.replay_warmup,
            train_batches_per_upload: self.train_batches_per_upload,
            snapshot_every_uploads: self.snapshot_every_uploads,
            total_training_steps: self.total_training_steps,
            seed: self.seed,
            run_dir,
        }
    }

    pub fn backoff(&self) -> Backoff {
        Backoff {
            base: Duration::from_millis(self.retry_base_ms),
            cap: Duration::from_millis(self.retry_cap_ms),
            max_attempts: self.retry_max_attempts,
        }
    }
}

/// `snake_case` key to its `--kebab-case` flag spelling.
pub fn kebab(key: &str) -> String {
    key.replace('_', "-")
}
