//! Batch sampling, the weighted residual loss, schedules, the optimizer and
//! the training loop.

mod loss;
mod optim;
mod sampling;
mod schedule;
mod trainer;

pub use loss::{
    loss_and_gradient, loss_value, taped_loss_gradient, time_weights, weighted_loss_and_gradient,
    LossGradient, CHUNK,
};
pub use optim::{Adam, AdamConfig, MovingAverage, PlateauConfig, PlateauState};
pub use sampling::{batch_rng, sample_batch, Batch, BatchSample};
pub use schedule::{weight, Schedule, Weighting};
pub use trainer::{
    run_training, LrOverride, RunOptions, StepRecord, TrainSummary, Trainer, TrainingConfig,
    CHECKPOINT_FILE, LOSS_CSV_HEADER, LOSS_FILE,
};
