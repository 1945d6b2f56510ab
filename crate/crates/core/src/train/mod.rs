//! Training loop, checkpointing, metrics and the ablation runner.

mod ablation;
mod metrics;
mod report;
mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use metrics::{ClassMetrics, EvalReport};
pub use report::{load_history, read_history, save_history, write_history, HISTORY_HEADER};
pub use trainer::{
    batches, evaluate, predict, train, Checkpoint, EpochRecord, TrainConfig, TrainOutcome, CHECKPOINT_FILE,
    WEIGHTS_FILE,
};
