use std::collections::HashMap;
use std::io::{self, ErrorKind};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::learner::Learner;
use super::wire::{read_message, write_message, Message, WireError};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerOptions {
    /// Stop accepting samples after this many uploads.
    pub max_uploads: Option<u64>,
    /// How long to keep answering SHUTDOWN to connected workers once done.
    pub shutdown_grace: Duration,
}

impl Default for ManagerOptions {
    fn default() -> Self {
        Self {
            max_uploads: None,
            shutdown_grace: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerSummary {
    pub uploads: u64,
    pub steps: u64,
    pub snapshots_saved: u64,
    pub final_snapshot: Option<PathBuf>,
    pub connections: u64,
}

enum Event {
    Connected(u64, TcpStream),
    Received(u64, Message),
    Dropped(u64, String),
    AcceptorDone,
}

fn reader(id: u64, mut stream: TcpStream, tx: Sender<Event>) {
    loop {
        match read_message(&mut stream) {
            Ok(msg) => {
                if tx.send(Event::Received(id, msg)).is_err() {
                    return;
                }
            }
            Err(e) => {
                let reason = match e {
                    WireError::Closed => "closed".to_string(),
                    other => other.to_string(),
                };
                let _ = tx.send(Event::Dropped(id, reason));
                return;
            }
        }
    }
}

/// Accepts connections until `stop` is raised, then takes whatever is still
/// queued in the backlog so those workers are answered instead of reset.
fn acceptor(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut next_id = 0u64;
    loop {
        let stopping = stop.load(Ordering::Relaxed);
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                let id = next_id;
                next_id += 1;
                log::info!("worker connection {id} from {peer}");
                let read_half = stream.try_clone()?;
                if tx.send(Event::Connected(id, stream)).is_err() {
                    break;
                }
                let tx = tx.clone();
                thread::spawn(move || reader(id, read_half, tx));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if stopping {
                    break;
                }
                thread::sleep(POLL);
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    let _ = tx.send(Event::AcceptorDone);
    Ok(())
}

/// Serves workers on `listener` until the learner's training budget (or
/// `max_uploads`) is used up or `stop` is raised. Each connection gets its
/// own reader thread; every message funnels into this thread, which alone
/// touches the learner, so requests are handled in arrival order.
pub fn run_manager(
    listener: TcpListener,
    learner: &mut Learner,
    options: ManagerOptions,
    stop: Arc<AtomicBool>,
) -> io::Result<ManagerSummary> {
    let (tx, rx) = mpsc::channel();
    let accept_stop = Arc::new(AtomicBool::new(false));
    let accept_thread = {
        let stop = accept_stop.clone();
        thread::spawn(move || acceptor(listener, tx, stop))
    };
    let mut conns: HashMap<u64, TcpStream> = HashMap::new();
    let mut connections = 0u64;
    let mut finished_at: Option<Instant> = None;
    let mut acceptor_done = false;

    loop {
        let finished = learner.done()
            || options.max_uploads.is_some_and(|m| learner.uploads >= m)
            || stop.load(Ordering::Relaxed);
        if finished && finished_at.is_none() {
            log::info!("training finished at step {}; shutting workers down", learner.step());
            finished_at = Some(Instant::now());
            for s in conns.values_mut() {
                let _ = write_message(s, &Message::Shutdown);
            }
        }
        if let Some(t) = finished_at {
            if t.elapsed() >= options.shutdown_grace || (conns.is_empty() && acceptor_done) {
                break;
            }
            if conns.is_empty() {
                accept_stop.store(true, Ordering::Relaxed);
            }
        }
        let event = match rx.recv_timeout(POLL) {
            Ok(e) => e,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        match event {
            Event::Connected(id, mut stream) => {
                connections += 1;
                if finished_at.is_some() {
                    let _ = write_message(&mut stream, &Message::Shutdown);
                }
                conns.insert(id, stream);
            }
            Event::AcceptorDone => acceptor_done = true,
            Event::Dropped(id, reason) => {
                log::info!("connection {id} dropped: {reason}");
                conns.remove(&id);
            }
            Event::Received(id, msg) => {
                let Some(stream) = conns.get_mut(&id) else {
                    continue;
                };
                let mut drop_conn = false;
                let reply = match msg {
                    _ if finished_at.is_some() => Some(Message::Shutdown),
                    Message::Hello { worker_id } => {
                        log::info!("connection {id} is worker {worker_id}");
                        None
                    }
                    Message::ModelRequest => Some(Message::Model(learner.model_bytes().to_vec())),
                    Message::Samples(batch) => {
                        let worker = batch.worker_id;
                        let outcome = learner.ingest(batch)?;
                        if let Some(row) = &outcome.log_row {
                            log::info!(
                                "upload {} from worker {worker}: step {} loss {:.5} max_q {:.4}",
                                row.uploads,
                                row.step,
                                row.mean_loss,
                                row.mean_max_q
                            );
                        }
                        Some(Message::Ack(outcome.ack))
                    }
                    other => {
                        log::warn!("connection {id} sent {:?}; disconnecting", other.kind());
                        drop_conn = true;
                        None
                    }
                };
                if let Some(reply) = reply {
                    if let Err(e) = write_message(stream, &reply) {
                        log::warn!("reply to connection {id} failed: {e}");
                        drop_conn = true;
                    }
                }
                if drop_conn {
                    let _ = stream.shutdown(Shutdown::Both);
                    conns.remove(&id);
                }
            }
        }
    }

    accept_stop.store(true, Ordering::Relaxed);
    for s in conns.values() {
        let _ = s.shutdown(Shutdown::Both);
    }
    let final_snapshot = learner.finish()?;
    accept_thread
        .join()
        .map_err(|_| io::Error::other("accept thread panicked"))??;
    Ok(ManagerSummary {
        uploads: learner.uploads,
        steps: learner.step(),
        snapshots_saved: learner.snapshots_saved,
        final_snapshot,
        connections,
    })
}

/// A manager running on a background thread.
pub struct ManagerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<(io::Result<ManagerSummary>, Learner)>,
}

impl ManagerHandle {
    pub fn spawn(listener: TcpListener, mut learner: Learner, options: ManagerOptions) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            let summary = run_manager(listener, &mut learner, options, flag);
            (summary, learner)
        });
        Ok(Self { addr, stop, thread })
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    /// Waits for the manager to finish and hands back its learner.
    pub fn join(self) -> io::Result<(ManagerSummary, Learner)> {
        let (summary, learner) = self
            .thread
            .join()
            .map_err(|_| io::Error::other("manager thread panicked"))?;
        Ok((summary?, learner))
    }
}
