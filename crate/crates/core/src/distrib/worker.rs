use std::io;
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::generator::{GenerateError, Generator};
use super::snapshot::{deserialize_model, SnapshotError};
use super::wire::{read_message, write_message, Message, SampleBatchMsg, WireError, ACK_DUPLICATE, ACK_OK};

/// Reconnection delays: `base`, doubling up to `cap`, at most `max_attempts`
/// tries in a row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
    pub max_attempts: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
            max_attempts: 8,
        }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSettings {
    pub manager_addr: String,
    pub samples_per_upload: usize,
    pub backoff: Backoff,
    /// Stop after this many acknowledged uploads.
    pub max_uploads: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerSummary {
    pub uploads: u64,
    pub reconnects: u32,
    pub shutdown_received: bool,
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("manager at {addr} unreachable after {attempts} attempts: {last}")]
    Unreachable {
        addr: String,
        attempts: u32,
        last: io::Error,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

enum Session {
    Done,
    Lost(String),
}

fn connect(settings: &WorkerSettings) -> Result<TcpStream, WorkerError> {
    let b = settings.backoff;
    let mut attempt = 0;
    loop {
        match TcpStream::connect(&settings.manager_addr) {
            Ok(s) => {
                s.set_nodelay(true).ok();
                return Ok(s);
            }
            Err(e) => {
                attempt += 1;
                if attempt >= b.max_attempts {
                    return Err(WorkerError::Unreachable {
                        addr: settings.manager_addr.clone(),
                        attempts: attempt,
                        last: e,
                    });
                }
                let wait = b.delay(attempt - 1);
                log::warn!("connect to {} failed ({e}); retrying in {wait:?}", settings.manager_addr);
                thread::sleep(wait);
            }
        }
    }
}

fn lost(e: WireError) -> Result<Session, WorkerError> {
    match e {
        WireError::Io(_) | WireError::Closed | WireError::Truncated { .. } => Ok(Session::Lost(e.to_string())),
        other => Err(WorkerError::Protocol(other.to_string())),
    }
}

/// Worker loop: request the model, play `samples_per_upload` frames with it,
/// upload, wait for the ACK, repeat until SHUTDOWN. A batch that was not
/// acknowledged is resent unchanged after reconnecting.
pub fn run_worker(settings: &WorkerSettings, generator: &mut Generator) -> Result<WorkerSummary, WorkerError> {
    let mut summary = WorkerSummary::default();
    let mut pending: Option<SampleBatchMsg> = None;
    loop {
        let mut stream = connect(settings)?;
        match session(&mut stream, settings, generator, &mut pending, &mut summary)? {
            Session::Done => return Ok(summary),
            Session::Lost(reason) => {
                log::warn!("lost manager connection: {reason}");
                summary.reconnects += 1;
            }
        }
    }
}

fn session(
    stream: &mut TcpStream,
    settings: &WorkerSettings,
    generator: &mut Generator,
    pending: &mut Option<SampleBatchMsg>,
    summary: &mut WorkerSummary,
) -> Result<Session, WorkerError> {
    let hello = Message::Hello {
        worker_id: generator.worker_id(),
    };
    if let Err(e) = write_message(stream, &hello) {
        return lost(e);
    }
    loop {
        if settings.max_uploads.is_some_and(|m| summary.uploads >= m) {
            return Ok(Session::Done);
        }
        if pending.is_none() {
            if let Err(e) = write_message(stream, &Message::ModelRequest) {
                return lost(e);
            }
            let bytes = match read_message(stream) {
                Ok(Message::Model(bytes)) => bytes,
                Ok(Message::Shutdown) => {
                    summary.shutdown_received = true;
                    return Ok(Session::Done);
                }
                Ok(other) => return Err(WorkerError::Protocol(format!("expected MODEL, got {:?}", other.kind()))),
                Err(e) => return lost(e),
            };
            let (net, _, step) = deserialize_model(&bytes)?;
            *pending = Some(generator.generate(&net, step, settings.samples_per_upload)?);
        }
        let batch = pending.as_ref().unwrap();
        if let Err(e) = write_message(stream, &Message::Samples(batch.clone())) {
            return lost(e);
        }
        match read_message(stream) {
            Ok(Message::Ack(code)) if code == ACK_OK || code == ACK_DUPLICATE => {
                *pending = None;
                summary.uploads += 1;
            }
            Ok(Message::Ack(code)) => {
                return Err(WorkerError::Protocol(format!("manager rejected batch (code {code})")))
            }
            Ok(Message::Shutdown) => {
                summary.shutdown_received = true;
                return Ok(Session::Done);
            }
            Ok(other) => return Err(WorkerError::Protocol(format!("expected ACK, got {:?}", other.kind()))),
            Err(e) => return lost(e),
        }
    }
}
