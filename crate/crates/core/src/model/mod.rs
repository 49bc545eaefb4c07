//! The tracking network and its training pieces.

pub mod autograd;
pub mod backbone;
pub mod bea;
pub mod checkpoint;
pub mod config;
pub mod cpa;
pub mod layers;
pub mod loss;
pub mod memory;
pub mod network;
pub mod optim;
pub mod params;
pub mod rpm;
pub mod rpn;

pub use autograd::{Tape, Tensor, Var};
pub use bea::AttentionBundle;
pub use config::ModelConfig;
pub use layers::{ForwardCtx, Mode};
pub use loss::{loss, LossBreakdown};
pub use memory::{MemoryEntry, MemoryState};
pub use network::{ForwardOutput, ForwardTrace, HvTrackNet};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use rpn::Prediction;
