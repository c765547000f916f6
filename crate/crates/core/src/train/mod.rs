//! Training loop, evaluation, checkpoints and the gradient check.

pub mod checkpoint;
pub mod evaluate;
pub mod gradcheck;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION};
pub use evaluate::{answers_match, evaluate, predict, same_expression, Metrics, Prediction};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
pub use trainer::{batch_gradients, prepare, thread_pool, train, train_with, EpochMetrics, TrainOutcome, THREADS_ENV};
