//! Mixed real/synthetic training with early stopping, and checkpoint files.

mod checkpoint;
mod train;
mod windows;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    batch_seed, format_loss_trace, init_seed, mean_window_loss, train, train_from, window_accuracy,
    write_loss_trace, LossRecord, TrainConfig, TrainOutcome,
};
pub use windows::{build_windows, real_count, sample_mixed_batch, Source, WindowRef, WindowStore};
