//! AdamW, the learning-rate schedule and the joint multi-task loop.

mod joint;
mod optim;

pub use joint::{
    predict_examples, score_examples, select_best_epoch, train_joint, train_step, EpochRecord,
    SchedulePolicy, TaskData, TrainOutcome,
};
pub use optim::{lr_at, AdamW, OptimConfig};
