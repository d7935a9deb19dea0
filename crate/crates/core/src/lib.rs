//! Tensor partition regression models.
//!
//! A stack of subject images is split into blocks, each block is reduced by a
//! Bayesian CP decomposition, the extracted subject scores are optionally
//! compressed by a latent factor model and a spike-and-slab probit regression
//! relates them to a binary response. Everything is fitted jointly by Gibbs
//! sampling.

pub mod als;
pub mod chain;
pub mod cp_bayes;
pub mod decompose;
mod draws;
pub mod error;
pub mod factor;
pub mod format;
pub mod geweke;
pub mod kruskal;
pub mod normal;
pub mod partition;
pub mod pipeline;
pub mod probit;
pub mod sim;
pub mod tensor;

pub use als::{cp_als, cp_als_seeded, AlsFit};
pub use cp_bayes::{gibbs_cp, CPHyper, CPState, CpSampler};
pub use decompose::{als_decompose, gibbs_decompose, Decomposition};
pub use chain::{ChainMeta, ChainStore, DrawSink, Summary};
pub use error::{Result, TprmError};
pub use factor::{FactorHyper, FactorState};
pub use kruskal::{cp_reconstruct, rmse, CPFactors};
pub use partition::{partition, unpartition, PartitionGrid};
pub use pipeline::{cross_validate, fit, predict_new, projection, screen, PipelineConfig, Projection};
pub use probit::{RegressionState, SelectHyper};
pub use tensor::{inner_product, outer_product, stack_subjects, DenseTensor};

pub use nalgebra;
