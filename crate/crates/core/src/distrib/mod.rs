//! Manager/worker sample pipeline, wire protocol and model snapshots.
//!
//! Workers play episodes under a fixed model and upload transitions; the
//! manager owns the replay memory and the training state, trains a fixed
//! number of batches per upload and republishes the model on request.

mod generator;
mod learner;
mod local;
mod manager;
mod snapshot;
mod wire;
mod worker;

pub use generator::{GenerateError, Generator};
pub use learner::{IngestOutcome, Learner, LearnerSettings, TrainLogRow, TRAIN_LOG_FILE};
pub use local::{run_local, LocalError};
pub use manager::{run_manager, ManagerHandle, ManagerOptions, ManagerSummary};
pub use snapshot::{
    deserialize_model, load_snapshot, save_snapshot, serialize_model, snapshot_file_name,
    SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
pub use wire::{
    decode_message, encode_message, read_message, write_message, Message, MessageType,
    SampleBatchMsg, WireError, ACK_DUPLICATE, ACK_OK, ACK_REJECTED, MAX_FRAME_LEN,
};
pub use worker::{run_worker, Backoff, WorkerError, WorkerSettings, WorkerSummary};

