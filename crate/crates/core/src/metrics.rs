//! Evaluation: held-out mean max Q, episode rewards, game lengths and the
//! one-minute survival rate.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::select_action_with;
use crate::arena::{
    apply_frame_skip, encode_state, AgentAction, ArenaConfig, ArenaError, ArenaState,
    StepOutcome, FRAMES_PER_SECOND, MAX_LEVEL, MIN_LEVEL,
};
use crate::nncore::{Activations, HeadOutput, Network, NnError, Scalar};

/// Sixty seconds of play.
pub const EVAL_CAP_FRAMES: u32 = 60 * FRAMES_PER_SECOND;
pub const DEFAULT_EVAL_EPSILON: f64 = 0.05;
pub const HOLDOUT_FILE: &str = "holdout.csv";
const HOLDOUT_MIN_EPISODES: u64 = 50;

/// States sampled once, before training, for tracking mean max Q.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSet {
    pub seed: u64,
    pub states: Vec<Vec<f32>>,
    /// Opponent level of the episode each state came from.
    pub levels: Vec<u8>,
}

/// Runs a uniform-random policy and reservoir-samples `n` encoded states.
///
/// Episodes cycle through levels 1 to 9 and continue until at least 50
/// episodes and `n` frames have been played.
pub fn build_holdout(arena: &ArenaConfig, n: usize, seed: u64) -> Result<HoldoutSet, ArenaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<Vec<f32>> = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut seen = 0u64;
    let mut episode = 0u64;
    while episode < HOLDOUT_MIN_EPISODES || seen < n as u64 {
        let level = MIN_LEVEL + (episode % u64::from(MAX_LEVEL)) as u8;
        let mut st = ArenaState::reset_with(arena.clone(), level, rng.gen())?;
        episode += 1;
        loop {
            let s = encode_state(&st);
            if (seen as usize) < n {
                states.push(s);
                levels.push(level);
            } else {
                let j = rng.gen_range(0..=seen);
                if (j as usize) < n {
                    states[j as usize] = s;
                    levels[j as usize] = level;
                }
            }
            seen += 1;
            let a = AgentAction::ALL[rng.gen_range(0..AgentAction::COUNT)];
            let out = st.step(a)?;
            if out.terminal || st.frame >= EVAL_CAP_FRAMES {
                break;
            }
        }
    }
    Ok(HoldoutSet { seed, states, levels })
}

impl HoldoutSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with a `level` column followed by one column per feature.
    pub fn to_csv(&self) -> String {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut out = format!("# seed={}\nlevel", self.seed);
        for i in 0..dim {
            write!(out, ",f{i}").unwrap();
        }
        out.push('\n');
        for (s, l) in self.states.iter().zip(&self.levels) {
            write!(out, "{l}").unwrap();
            for x in s {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, format!("holdout: {m}"));
        let mut lines = text.lines();
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("# seed="))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("missing seed line"))?;
        lines.next().ok_or_else(|| bad("missing header"))?;
        let mut states = Vec::new();
        let mut levels = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut fields = line.split(',');
            let level = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad level"))?;
            let s = fields
                .map(|f| f.parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad feature"))?;
            levels.push(level);
            states.push(s);
        }
        Ok(Self { seed, states, levels })
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::write(dir.join(HOLDOUT_FILE), self.to_csv())
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        Self::from_csv(&fs::read_to_string(dir.join(HOLDOUT_FILE))?)
    }
}

/// Mean over the holdout of `max_a Q(s, a)`; the value estimate `V(s)` for
/// actor-critic heads.
pub fn mean_max_q<T: Scalar>(net: &Network<T>, holdout: &HoldoutSet) -> f64 {
    if holdout.is_empty() {
        return 0.0;
    }
    let mut acts = Activations::for_network(net);
    let mut x = Vec::with_capacity(net.input_width());
    let mut total = 0.0f64;
    for s in &holdout.states {
        x.clear();
        x.extend(s.iter().map(|&v| T::from_f32(v).unwrap()));
        net.forward_into(&x, &mut acts).expect("holdout dimension matches network");
        let v = match &acts.output {
            HeadOutput::ActorCritic { value, .. } => *value,
            _ => acts
                .action_scores()
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max),
        };
        total += v.to_f64().unwrap();
    }
    total / holdout.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Episodes cycle through these levels.
    pub levels: Vec<u8>,
    pub episodes: usize,
    pub seed: u64,
    /// Exploration for value heads; actor-critic heads always sample.
    pub epsilon: f64,
    pub cap_frames: u32,
    pub arena: ArenaConfig,
}

impl EvalOptions {
    pub fn new(level: u8, episodes: usize, seed: u64, greedy: bool) -> Self {
        Self {
            levels: vec![level],
            episodes,
            seed,
            epsilon: if greedy { 0.0 } else { DEFAULT_EVAL_EPSILON },
            cap_frames: EVAL_CAP_FRAMES,
            arena: ArenaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeResult {
    pub level: u8,
    pub length: u32,
    /// Idle, undamaged frames; the episode reward is this over 60.
    pub idle_frames: u32,
}

impl EpisodeResult {
    pub fn reward(&self) -> f64 {
        f64::from(self.idle_frames) / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub level: u8,
    pub episodes: usize,
    pub mean_length: f64,
    pub median_length: f64,
    pub mean_reward: f64,
    pub survival_rate_60s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cap_frames: u32,
    pub results: Vec<EpisodeResult>,
    pub overall: LevelSummary,
    pub per_level: Vec<LevelSummary>,
}

fn summarize(level: u8, results: &[EpisodeResult], cap: u32) -> LevelSummary {
    let n = results.len();
    let mut lengths: Vec<u32> = results.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        f64::from(lengths[n / 2])
    } else {
        (f64::from(lengths[n / 2 - 1]) + f64::from(lengths[n / 2])) / 2.0
    };
    let nf = n.max(1) as f64;
    LevelSummary {
        level,
        episodes: n,
        mean_length: lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / nf,
        median_length: median,
        mean_reward: results.iter().map(EpisodeResult::reward).sum::<f64>() / nf,
        survival_rate_60s: results.iter().filter(|r| r.length >= cap).count() as f64 / nf,
    }
}

impl EvalReport {
    pub fn from_results(results: Vec<EpisodeResult>, cap_frames: u32) -> Self {
        let mut levels: Vec<u8> = results.iter().map(|r| r.level).collect();
        levels.sort_unstable();
        levels.dedup();
        let per_level = levels
            .iter()
            .map(|&l| {
                let rs: Vec<EpisodeResult> = results.iter().filter(|r| r.level == l).copied().collect();
                summarize(l, &rs, cap_frames)
            })
            .collect();
        Self {
            cap_frames,
            overall: summarize(0, &results, cap_frames),
            per_level,
            results,
        }
    }

    pub fn survival_rate_60s(&self) -> f64 {
        self.overall.survival_rate_60s
    }

    pub fn mean_length(&self) -> f64 {
        self.overall.mean_length
    }

    /// One row per level plus a final `all` row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("level,episodes,mean_length,median_length,mean_seconds,mean_reward,survival_rate_60s\n");
        let mut row = |name: String, s: &LevelSummary| {
            writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                s.episodes,
                s.mean_length,
                s.median_length,
                s.mean_length / f64::from(FRAMES_PER_SECOND),
                s.mean_reward,
                s.survival_rate_60s
            )
            .unwrap();
        };
        for s in &self.per_level {
            row(s.level.to_string(), s);
        }
        row("all".into(), &self.overall);
        out
    }

    pub fn summary(&self) -> String {
        let o = &self.overall;
        let fps = f64::from(FRAMES_PER_SECOND);
        let mut out = format!(
            "episodes           {}\nmean game length   {:.1} frames ({:.2} s)\nmedian game length {:.1} frames ({:.2} s)\nmean reward        {:.4}\nsurvival_rate_60s  {:.4}\n",
            o.episodes,
            o.mean_length,
            o.mean_length / fps,
            o.median_length,
            o.median_length / fps,
            o.mean_reward,
            o.survival_rate_60s
        );
        if self.per_level.len() > 1 {
            for s in &self.per_level {
                writeln!(
                    out,
                    "  level {}: {} episodes, mean {:.1} frames, survival {:.4}",
                    s.level, s.episodes, s.mean_length, s.survival_rate_60s
                )
                .unwrap();
            }
        }
        out
    }
}

/// Plays `opts.episodes` episodes with an arbitrary policy. The policy sees
/// the state, its encoding and a random stream separate from the arena's.
pub fn evaluate_policy<F>(opts: &EvalOptions, policy: F) -> Result<EvalReport, ArenaError>
where
    F: FnMut(&ArenaState, &[f32], &mut ChaCha8Rng) -> AgentAction,
{
    evaluate_observed(opts, policy, |_, _, _, _| {})
}

/// [`evaluate_policy`] that also reports every frame as
/// `(episode index, state after the step, action chosen, outcome)`.
pub fn evaluate_observed<F, O>(opts: &EvalOptions, mut policy: F, mut observe: O) -> Result<EvalReport, ArenaError>
where
    F: FnMut(&ArenaState, &[f32], &mut ChaCha8Rng) -> AgentAction,
    O: FnMut(usize, &ArenaState, AgentAction, &StepOutcome),
{
    assert!(!opts.levels.is_empty(), "no evaluation levels");
    let mut episode_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut act_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    act_rng.set_stream(1);
    let mut results = Vec::with_capacity(opts.episodes);
    for i in 0..opts.episodes {
        let level = opts.levels[i % opts.levels.len()];
        let mut st = ArenaState::reset_with(opts.arena.clone(), level, episode_rng.gen())?;
        let mut idle = 0;
        loop {
            let s = encode_state(&st);
            let chosen = policy(&st, &s, &mut act_rng);
            let a = apply_frame_skip(chosen, opts.arena.frame_skip_p, &mut act_rng);
            let out = st.step(a)?;
            observe(i, &st, chosen, &out);
            if out.reward > 0.0 {
                idle += 1;
            }
            if out.terminal || st.frame >= opts.cap_frames {
                break;
            }
        }
        results.push(EpisodeResult {
            level,
            length: st.frame,
            idle_frames: idle,
        });
    }
    Ok(EvalReport::from_results(results, opts.cap_frames))
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Network policy: epsilon-greedy for value heads, softmax sampling for
/// actor-critic heads.
pub fn evaluate_network<T: Scalar>(net: &Network<T>, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    evaluate_network_observed(net, opts, |_, _, _, _| {})
}

pub fn evaluate_network_observed<T: Scalar>(
    net: &Network<T>,
    opts: &EvalOptions,
    observe: impl FnMut(usize, &ArenaState, AgentAction, &StepOutcome),
) -> Result<EvalReport, EvalError> {
    let mut acts = Activations::for_network(net);
    let mut x = Vec::with_capacity(net.input_width());
    let mut failure = None;
    let policy = |_: &ArenaState, s: &[f32], rng: &mut ChaCha8Rng| {
        x.clear();
        x.extend(s.iter().map(|&v| T::from_f32(v).unwrap()));
        match select_action_with(net, &mut acts, &x, opts.epsilon, rng) {
            Ok(a) => AgentAction::ALL[a],
            Err(e) => {
                failure.get_or_insert(e);
                AgentAction::Nothing
            }
        }
    };
    let report = evaluate_observed(opts, policy, observe)?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

/// Single-level evaluation with the 60 s cap; `greedy` sets epsilon to 0
/// instead of 0.05.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    level: u8,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalReport, EvalError> {
    evaluate_network(net, &EvalOptions::new(level, episodes, seed, greedy))
}
