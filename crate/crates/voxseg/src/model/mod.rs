//! Promptable memory-bank segmentation model: autodiff tape, parameters and
//! optimizer, memory bank, network, checkpointing, gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod memory;
pub mod net;
pub mod params;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use memory::{MemoryBank, MemoryEntry};
pub use net::{Model, ModelConfig, Net};
pub use params::{adam_step, AdamState, ParamStore};
pub use tape::{Tape, Var};
