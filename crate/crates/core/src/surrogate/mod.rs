//! The CNN surrogate: architecture, loss, training loop and checkpoints.

mod checkpoint;
mod infer;
mod loss;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use infer::Surrogate;
pub use loss::{loss, LossComponents, LossWeights};
pub use model::{
    Architecture, Normalization, Prediction, SurrogateInput, SurrogateWeights, DEFAULT_FLAT_LEN, EXTRA_FEATURES,
    FINAL_SIDE, IMAGE_SIDE, REGRESSION_OUTPUTS, TENSOR_NAMES,
};
pub use train::{
    batch_gradient, batch_loss, train, train_samples, train_samples_with, EpochStats, TrainConfig, TrainHistory,
    GRADIENT_CHUNK,
};
