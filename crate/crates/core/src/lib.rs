//! Conditional mutual information estimation from samples.
//!
//! The estimators train a feed-forward binary classifier to tell samples of
//! the joint density `p(x, y, z)` apart from samples of the product density
//! `p(x|z) p(y, z)`. Product samples are synthesized from the data itself by
//! isolated k-NN resampling: a random isolation set of indices keeps its
//! `(y, z)` pairs and borrows `x` values from the `k` nearest `z`-neighbors
//! outside the set. The classifier odds give a density-ratio estimate that
//! feeds the Donsker-Varadhan (DV), NWJ, and log-density-ratio (LDR)
//! estimators.
//!
//! Modules:
//! - [`datagen`]: Gaussian chain generator, closed-form ground truth, CSV I/O.
//! - [`knn`]: brute-force and k-d tree neighbor search with deterministic ties.
//! - [`resample`]: joint, isolated k-NN, and MI-Diff batches; batch schedules.
//! - [`classifier`]: clipped-sigmoid MLP trained with Adam on cross-entropy.
//! - [`estimator`]: density-ratio models, DV/NWJ/LDR, the trial loop, MI-Diff.
//! - [`theory`]: concentration-bound parameters as executable diagnostics.
//! - [`dinfo`]: directed information over time series and three-node graphs.
//! - [`stats`]: Mann-Whitney U test for comparing estimator outputs.

pub mod classifier;
pub mod datagen;
pub mod dinfo;
mod error;
pub mod estimator;
pub mod knn;
pub mod report;
pub mod resample;
pub mod rng;
pub mod stats;
pub mod theory;

pub use classifier::{AdamConfig, Classifier, NetConfig};
pub use datagen::{ComponentMap, Dataset, GaussianChainConfig, Role};
pub use error::{Error, Result};
pub use estimator::{EstimateReport, Estimates, EstimatorConfig, EstimatorKind, RatioModel};
pub use knn::{KnnStructure, NeighborIndex};
pub use resample::{BatchOrigin, BatchSchedule, LabeledBatch, ScheduleMode};
