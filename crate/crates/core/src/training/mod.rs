//! Triplet datasets, augmentation, synthetic scenes, and the training loop.

mod augment;
mod dataset;
pub mod synthetic;
mod train;

pub use augment::{apply_augment, augment, sample_rng, AugmentFlags};
pub use dataset::{
    dataset_stats, ensure_flows, extract_patches, extract_triplets, load_dataset, score_patch, select_patches, DatasetOptions,
    DatasetStats, PatchScore, Triplet, TripletFlows,
};
pub use train::{load_checkpoint, train, LossKind, Progress, TrainConfig, TrainOutcome, Trainer};

use crate::codecs::CodecError;
use crate::flow::FlowError;
use crate::synthesis::ModelError;
use crate::tensor::TensorError;
use crate::warping::WarpError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
