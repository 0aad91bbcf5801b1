//! The desk-scale trainable model: a manual-backprop MLP with ReLU hidden
//! layers and softmax cross-entropy, plus dataset loaders.

mod data;
mod mlp;
mod train;

pub use data::{load_mnist, split_holdout, synth_blob_centers, synth_blobs, Dataset, LabeledBatch};
pub use mlp::{forward, loss_and_grads, loss_and_accuracy, softmax_rows, ForwardCache, Grads, Linear, MlpModel};
pub use train::{train, BatchStream, LrSchedule, ModelOptimizer, TrainConfig, TrainTrace, TraceRow};
