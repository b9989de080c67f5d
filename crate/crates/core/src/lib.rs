//! Benchmarking engine for conditional average dose response (CADR)
//! estimators.
//!
//! A [`dgp::DgpSpec`] describes covariates, confounded intervention and dose
//! assignment, a response surface `mu(t, d, x)` and noise. From it,
//! [`decomposition`] materializes five observational scenarios that add
//! intervention non-uniformity, intervention confounding, dose non-uniformity
//! and dose confounding one at a time, fits every configured estimator on each
//! and scores it by MISE against the true surface.

pub mod data;
pub mod decomposition;
pub mod dgp;
pub mod estimators;
pub mod evaluation;
pub mod io;
pub mod seed;
pub mod selection;
pub mod stats;

pub use data::{CovariateMatrix, InterventionSpace, ScenarioDataset, ScenarioId, SplitFractions, SplitIndices};
pub use decomposition::{build_plan, execute_plan, DecompositionPlan, DecompositionReport};
pub use dgp::{DgpSpec, ResponseSurface};
pub use estimators::{EstimatorSpec, Family, TrainedModel};
pub use seed::SeedTree;
