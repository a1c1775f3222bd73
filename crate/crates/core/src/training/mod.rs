//! Loss, optimizer, epoch loop, best-epoch selection and checkpoints.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{
    checkpoint_dtype, checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, set_config_field,
    TrainedModel, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{rmsprop_step, OptimizerState, RmsPropConfig};
pub use trainer::{
    evaluate_qwk, fit_with_selection, mse, mse_loss, predict_scores, train_batch, train_epoch, EpochRecord, EpochStats,
    Example, FitFailure, TrainConfig, TrainReport,
};
