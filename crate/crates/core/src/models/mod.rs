//! The three residual architectures, checkpoints and transfer surgery.

mod architecture;
pub mod checkpoint;
pub mod transfer;

pub use architecture::{
    build_model, build_model_with_rng, ArchitectureKind, Model, ModelConfig, BLOCKS_PER_STAGE, STAGE_WIDTHS,
};
pub use checkpoint::{load_state, save_checkpoint, Checkpoint, CheckpointEntry, CheckpointMetadata};
pub use transfer::{transfer_load, SurgeryReport, DEFAULT_SKIP_PREFIXES};
