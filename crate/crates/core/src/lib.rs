//! Exact and sparse variational Gaussian-process regression, sparse-grid
//! combination models, distributed expert training and expert aggregation.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod exact_gp;
pub mod experts;
pub mod kernels;
pub mod numerics;
pub mod prediction;
pub mod sparse_grid;
pub mod svgp;
pub mod trace;

pub use aggregation::{Aggregator, ExpertEnsemble, ModelKind, PoeRule, WeightSolution};
pub use data::Dataset;
pub use error::{Error, Result};
pub use exact_gp::ExactGp;
pub use experts::{CentralSubset, Partition, PartitionStrategy, TrainConfig, TrainMethod};
pub use kernels::{HyperParam, Hyperparameters, KernelFamily, KernelSpec};
pub use numerics::{SpdFactor, SymmetricSolve};
pub use prediction::GaussianPrediction;
pub use sparse_grid::{MultiIndex, OptiComSolution};
pub use svgp::{InducingInit, Svgp, SvgpParam};
pub use trace::ShapeTrace;
