//! Network definition, configuration and checkpoint I/O.

pub mod checkpoint;
pub mod config;
pub mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ConvKind, ModelConfig};
pub use model::{Block, Mode, RgaNet, Session, StageActivations, StageVars};
