//! Tiny conditional velocity network, its optimiser, training loops,
//! sampler and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{run_gradcheck, GradCheckReport, GRADCHECK_TOLERANCE};
pub use model::{backward, batch_loss, ArchConfig, DenoiserParams, Example, Gradients, ModelInput};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use sampler::{euler_sample, sample};
pub use train::{train_stage1, train_stage2, GuidanceKind, StepLog, TrainConfig, TrainOutcome};
