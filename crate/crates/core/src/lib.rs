pub mod agents;
pub mod arena;
pub mod config;
pub mod distrib;
pub mod metrics;
pub mod nncore;
pub mod replay;

pub use agents::{AgentKind, TrainState};
pub use nncore::{Network, Scalar};

pub type NetworkF32 = nncore::Network<f32>;
pub type NetworkF64 = nncore::Network<f64>;
pub type TrainStateF32 = agents::TrainState<f32>;
pub type TrainStateF64 = agents::TrainState<f64>;
