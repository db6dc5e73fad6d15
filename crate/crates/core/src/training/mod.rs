//! Initialization, optimization, checkpoints and the training loop.

mod checkpoint;
mod init;
mod optim;
mod state;
mod trainer;
mod verify;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use init::{xavier_bound, xavier_init, xavier_init_with};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use state::{load_checkpoint, save_checkpoint, training_checkpoint, LoadedCheckpoint};
pub use trainer::{
    derive_seed, eval_candidates, evaluate, evaluate_report, split_candidates, train, train_model, train_step,
    LogRow, TrainConfig, TrainOutcome, TrainingLog, UpdateMode,
};
pub use verify::{stop_gradient_leak, tiny_config, tiny_fixture, verify_gradients, GradientReport, TinyFixture};
