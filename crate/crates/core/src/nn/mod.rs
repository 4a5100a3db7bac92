//! A small 1D convolutional classifier trained from scratch.

mod adam;
mod config;
mod io;
mod net;
mod train;

pub use adam::{adam_step, AdamState};
pub use config::{NetConfig, TrainConfig};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use net::{ModelMeta, NetModel};
pub use train::{split_indices, train, train_with_progress, EpochStats, Regime};
