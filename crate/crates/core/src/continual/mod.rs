//! Class-incremental learning: task streams, herding memory, the training
//! loop, nearest-class-mean prediction and the accuracy/forgetting ledger.

pub mod memory;
pub mod metrics;
pub mod ncm;
pub mod runner;
pub mod stream;
pub mod train;

pub use memory::{herding_select, update_memory, Memory};
pub use metrics::{compute_metrics, MetricsLedger};
pub use ncm::{class_means, ncm_predict, ncm_predict_features};
pub use runner::{run_sequence, Method, RunConfig, RunOutcome, TaskRecord};
pub use stream::{build_task_stream, TaskData, TaskStream};
pub use train::{train_task, EpochStats, TrainConfig, TrainReport};
