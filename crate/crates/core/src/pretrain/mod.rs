//! Multitask offline pretraining: batches, composite objective, Adam,
//! metrics and checkpoints.

mod checkpoint;
mod config;
mod objective;
mod trainer;

pub use checkpoint::{
    checkpoint_dtype, decode_checkpoint, decode_checkpoint_cast, encode_checkpoint, load_checkpoint, load_checkpoint_cast,
    save_checkpoint, Checkpoint, CHECKPOINT_VERSION, METRIC_TAIL,
};
pub use config::{MetricRecord, PretrainConfig};
pub use objective::{inverse_dynamics_head, negative_mode, objective, ModelSpec, ObjectiveStats, PretrainModel};
pub use trainer::{
    pretrain, pretrain_to_dir, Pretrainer, RunOutputs, FINAL_CHECKPOINT, LAST_GOOD_CHECKPOINT, METRICS_FILE,
    PROBE_FILE,
};
