use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{AgentError, TrainState};
use crate::metrics::{mean_max_q, HoldoutSet};
use crate::replay::ReplayMemory;

use super::snapshot::{save_snapshot, serialize_model};
use super::wire::{SampleBatchMsg, ACK_DUPLICATE, ACK_OK, ACK_REJECTED};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
const TRAIN_LOG_HEADER: &str = "step,mean_loss,mean_max_q,uploads,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSettings {
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub replay_warmup: usize,
    pub train_batches_per_upload: usize,
    pub snapshot_every_uploads: u64,
    pub total_training_steps: u64,
    /// Seeds the replay sampling stream.
    pub seed: u64,
    /// Where snapshots and the training log go; `None` keeps everything in memory.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub mean_loss: f64,
    pub mean_max_q: f64,
    pub uploads: u64,
    pub wall_seconds: f64,
}

impl TrainLogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.step, self.mean_loss, self.mean_max_q, self.uploads, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub ack: u8,
    pub batches_trained: usize,
    /// Present when at least one batch was trained.
    pub log_row: Option<TrainLogRow>,
    pub snapshot: Option<PathBuf>,
}

/// The manager's training context: replay memory, training state and upload
/// bookkeeping. Only this object touches either.
pub struct Learner {
    pub train: TrainState<f32>,
    pub replay: ReplayMemory,
    pub settings: LearnerSettings,
    pub uploads: u64,
    pub snapshots_saved: u64,
    holdout: Option<HoldoutSet>,
    rng: ChaCha8Rng,
    seen: HashSet<(u32, u32)>,
    log: Option<BufWriter<File>>,
    started: Instant,
    last_saved_step: Option<u64>,
    model_cache: Option<(u64, Vec<u8>)>,
}

impl Learner {
    pub fn new(
        train: TrainState<f32>,
        settings: LearnerSettings,
        holdout: Option<HoldoutSet>,
    ) -> io::Result<Self> {
        let log = match &settings.run_dir {
            Some(dir) => Some(open_log(dir)?),
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(u64::MAX);
        Ok(Self {
            replay: ReplayMemory::new(settings.replay_capacity).with_warmup(settings.replay_warmup),
            train,
            uploads: 0,
            snapshots_saved: 0,
            holdout,
            rng,
            seen: HashSet::new(),
            log,
            started: Instant::now(),
            last_saved_step: None,
            model_cache: None,
            settings,
        })
    }

    pub fn step(&self) -> u64 {
        self.train.step
    }

    /// Training budget exhausted.
    pub fn done(&self) -> bool {
        self.train.step >= self.settings.total_training_steps
    }

    /// Serialized online network, cached until the next optimizer step.
    pub fn model_bytes(&mut self) -> &[u8] {
        let step = self.train.step;
        if self.model_cache.as_ref().map(|(s, _)| *s) != Some(step) {
            let bytes = serialize_model(&self.train.online, self.train.kind, step);
            self.model_cache = Some((step, bytes));
        }
        &self.model_cache.as_ref().unwrap().1
    }

    /// Stores an upload, trains on the replay memory and persists a snapshot
    /// on every `snapshot_every_uploads`-th accepted upload.
    pub fn ingest(&mut self, batch: SampleBatchMsg) -> io::Result<IngestOutcome> {
        let mut outcome = IngestOutcome {
            ack: ACK_OK,
            batches_trained: 0,
            log_row: None,
            snapshot: None,
        };
        let key = (batch.worker_id, batch.batch_seq);
        if self.seen.contains(&key) {
            log::debug!("duplicate batch {key:?} ignored");
            outcome.ack = ACK_DUPLICATE;
            return Ok(outcome);
        }
        let dim = self.train.online.input_width();
        let actions = self.train.online.action_count();
        if batch
            .transitions
            .iter()
            .any(|t| t.state.len() != dim || usize::from(t.action) >= actions)
        {
            log::warn!("batch {key:?} does not fit the model; rejected");
            outcome.ack = ACK_REJECTED;
            return Ok(outcome);
        }
        self.seen.insert(key);
        for t in batch.transitions {
            self.replay.push(t).expect("dimension checked above");
        }
        self.uploads += 1;

        let mut loss_sum = 0.0;
        if self.replay.is_ready() {
            let remaining = self.settings.total_training_steps.saturating_sub(self.train.step);
            let k = (self.settings.train_batches_per_upload as u64).min(remaining) as usize;
            for _ in 0..k {
                let sample = self
                    .replay
                    .sample(self.settings.batch_size, &mut self.rng)
                    .expect("replay is ready");
                match self.train.update(&sample) {
                    Ok(stats) => {
                        loss_sum += stats.loss;
                        outcome.batches_trained += 1;
                    }
                    Err(AgentError::NonFiniteLoss | AgentError::Network(_)) => {}
                    Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
                }
            }
        }

        if outcome.batches_trained > 0 {
            let row = TrainLogRow {
                step: self.train.step,
                mean_loss: loss_sum / outcome.batches_trained as f64,
                mean_max_q: self
                    .holdout
                    .as_ref()
                    .map_or(f64::NAN, |h| mean_max_q(&self.train.online, h)),
                uploads: self.uploads,
                wall_seconds: self.started.elapsed().as_secs_f64(),
            };
            if let Some(log) = &mut self.log {
                writeln!(log, "{}", row.csv_line())?;
                log.flush()?;
            }
            outcome.log_row = Some(row);
        }

        let every = self.settings.snapshot_every_uploads;
        if every > 0 && self.uploads % every == 0 {
            self.snapshots_saved += 1;
            outcome.snapshot = self.persist()?;
        }
        Ok(outcome)
    }

    fn persist(&mut self) -> io::Result<Option<PathBuf>> {
        let Some(dir) = &self.settings.run_dir else {
            return Ok(None);
        };
        let path = save_snapshot(dir, &self.train.online, self.train.kind, self.train.step)?;
        self.last_saved_step = Some(self.train.step);
        log::info!("saved {}", path.display());
        Ok(Some(path))
    }

    /// Final snapshot, skipped when the last periodic one already holds this step.
    pub fn finish(&mut self) -> io::Result<Option<PathBuf>> {
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        if self.last_saved_step == Some(self.train.step) {
            return Ok(None);
        }
        self.persist()
    }
}

fn open_log(dir: &Path) -> io::Result<BufWriter<File>> {
    let path = dir.join(TRAIN_LOG_FILE);
    let fresh = !path.exists() || std::fs::metadata(&path)?.len() == 0;
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?);
    if fresh {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
    }
    Ok(w)
}
