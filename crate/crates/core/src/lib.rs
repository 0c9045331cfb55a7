//! Sparse autoencoder training and analysis over model-activation datasets.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common concrete instantiations.

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod ontology;
pub mod optim;
pub mod probe;
pub mod sae;
pub mod scalar;
pub mod schedule;
pub mod steering;
pub mod store;
pub mod sweep;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use sae::{SaeArchitecture, SaeKind, Sparsity};
pub use store::{ActivationDataset, DatasetMeta, DatasetView};
pub use trainer::{TrainConfig, TrainReport};

pub type SaeParams32 = sae::SaeParams<f32>;
pub type SaeParams64 = sae::SaeParams<f64>;
pub type Sae32 = sae::Sae<f32>;
pub type Sae64 = sae::Sae<f64>;
pub type LinearProbe32 = probe::LinearProbe<f32>;
pub type LinearProbe64 = probe::LinearProbe<f64>;
pub type SteeringVector32 = steering::SteeringVector<f32>;
pub type SteeringVector64 = steering::SteeringVector<f64>;
