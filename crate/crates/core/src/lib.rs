//! Multi-criteria, rank-based aggregation of feature-importance explanations.
//!
//! Several explainers describe the same prediction of a black-box tabular
//! classifier. Each explanation is scored on three rank-based criteria
//! ([`metrics`]), the explainers × criteria matrix is turned into per-explainer
//! weights by a multi-criteria decision method ([`mcdm`]), and the component
//! rankings are fused by weighted rank aggregation ([`rankagg`]). The
//! [`pipeline`] module wires these stages together and runs the comparison
//! experiments.

pub mod bridge;
pub mod dataset;
pub mod error;
pub mod explainers;
pub mod importance;
pub mod ingest;
pub mod mcdm;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod pipeline;
pub mod rankagg;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use importance::{
    minmax_normalize, rank_features, squared_inverse_scores, Explanation, FeatureKind,
    FeatureSchema, Ranking, Weights,
};
pub use model::{FnPredictor, Predictor};
