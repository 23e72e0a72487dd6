//! Iterative refinement of approximate posteriors for discrete directed belief
//! networks.
//!
//! A recognition network proposes factorized Bernoulli means `μ_0`; adaptive
//! importance refinement moves them toward the true posterior mean before the
//! generative and recognition parameters are updated. Every stochastic
//! estimator in the crate has an exact enumeration counterpart in [`oracle`]
//! for models with at most [`model::ENUMERATION_CAP`] latent bits.

pub mod error;
pub mod numerics;
pub mod params;
pub mod model;
pub mod recognition;
pub mod inference;
pub mod oracle;
pub mod training;
pub mod data;
pub mod continuous;
pub mod checks;

pub use error::{Error, Result};
pub use inference::{ImportanceSet, RefineConfig, RefinementTrace, WeightScheme};
pub use model::{Architecture, GenerativeParams, LatentLayout, LayerParams, Prior, PriorKind};
pub use numerics::{Matrix, RandomStream};
pub use params::Parameters;
pub use recognition::{RecognitionParams, VariationalState};
pub use training::{Estimator, GradientBundle, TrainConfig};
