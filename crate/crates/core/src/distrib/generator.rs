use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{select_action_with, EpsilonSchedule};
use crate::arena::{
    apply_frame_skip, encode_state, sample_opponent_level, AgentAction, ArenaConfig, ArenaError,
    ArenaState,
};
use crate::nncore::{Activations, Network, NnError};
use crate::replay::Transition;

use super::wire::SampleBatchMsg;

/// Episode generator owned by one worker.
///
/// Episodes carry over between uploads, so a batch may start mid-episode.
/// All randomness (levels, episode seeds, exploration, frame skips) comes
/// from one stream derived from `(seed, worker_id)`, which makes the output
/// a pure function of those and the sequence of models supplied.
#[derive(Debug, Clone)]
pub struct Generator {
    worker_id: u32,
    arena: ArenaConfig,
    schedule: EpsilonSchedule,
    /// Frames after which a training episode is cut off; 0 for no limit.
    episode_cap: u64,
    rng: ChaCha8Rng,
    current: Option<(ArenaState, Vec<f32>)>,
    next_seq: u32,
    pub episodes_finished: u64,
    pub frames_generated: u64,
}

impl Generator {
    pub fn new(
        worker_id: u32,
        seed: u64,
        arena: ArenaConfig,
        schedule: EpsilonSchedule,
        episode_cap: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + u64::from(worker_id));
        Self {
            worker_id,
            arena,
            schedule,
            episode_cap,
            rng,
            current: None,
            next_seq: 0,
            episodes_finished: 0,
            frames_generated: 0,
        }
    }

    pub fn worker_id(&self) -> u32 {
        self.worker_id
    }

    fn start_episode(&mut self) -> Result<(ArenaState, Vec<f32>), ArenaError> {
        let level = sample_opponent_level(&mut self.rng, self.arena.top_level_share);
        let st = ArenaState::reset_with(self.arena.clone(), level, self.rng.gen())?;
        let s = encode_state(&st);
        Ok((st, s))
    }

    /// Plays `count` frames with `net`, acting epsilon-greedily at the
    /// exploration rate for `model_step`.
    pub fn generate(
        &mut self,
        net: &Network<f32>,
        model_step: u64,
        count: usize,
    ) -> Result<SampleBatchMsg, GenerateError> {
        let epsilon = self.schedule.at(model_step);
        let mut acts = Activations::for_network(net);
        let mut transitions = Vec::with_capacity(count);
        while transitions.len() < count {
            let (mut st, s) = match self.current.take() {
                Some(c) => c,
                None => self.start_episode()?,
            };
            let a = select_action_with(net, &mut acts, &s, epsilon, &mut self.rng)?;
            let chosen = AgentAction::from_index(a)?;
            let applied = apply_frame_skip(chosen, self.arena.frame_skip_p, &mut self.rng);
            let out = st.step(applied)?;
            let next = encode_state(&st);
            self.frames_generated += 1;
            let capped = self.episode_cap > 0 && u64::from(st.frame) >= self.episode_cap;
            transitions.push(Transition {
                state: s,
                action: a as u8,
                reward: out.reward,
                next_state: next.clone(),
                terminal: out.terminal,
            });
            if out.terminal || capped {
                self.episodes_finished += 1;
            } else {
                self.current = Some((st, next));
            }
        }
        let batch_seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        Ok(SampleBatchMsg {
            worker_id: self.worker_id,
            batch_seq,
            model_step,
            transitions,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Network(#[from] NnError),
}
