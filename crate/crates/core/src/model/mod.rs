//! Classifiers: the two-branch CNN-LSTM network with the growing-days
//! input, its single-branch ablations, and the random forest baseline.

pub mod forest;
pub mod io;
pub mod layers;
pub mod net;
pub mod params;
pub mod predict;
pub mod train;

pub use forest::{flatten_samples, forest_train, Forest, ForestConfig};
pub use io::{read_forest, read_weights, write_forest, write_weights};
pub use net::{forward, forward_infer, loss_and_gradients, Batch, Dataset, ForwardMode};
pub use params::{init_params, ArchDescriptor, Gradients, ModelKind, ModelParams, NamedTensor};
pub use predict::{predict_map, Predictor};
pub use train::{evaluate, train, EpochStats, TrainConfig};

#[cfg(test)]
mod tests;
