//! Feature-importance explainers and the reference predictor.
//!
//! An [`Explainer`] is first fitted to a dataset, giving a
//! [`FittedExplainer`] that can then explain single instances. The built-in
//! explainers fit by computing an [`ExplainerFitState`]; bridge-backed ones
//! fit by shipping the dataset to an external process.

pub mod anchor;
pub mod fit;
pub mod forest;
pub mod lime;
pub mod shap;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use anchor::{anchor_like_explain, AnchorConfig, AnchorRule, Condition};
pub use fit::{ExplainerFitState, FitOptions};
pub use forest::{train_forest, ForestConfig, ForestModel};
pub use lime::{lime_like_explain, LimeConfig, LimeOutput};
pub use shap::{exact_shapley, shapley_sample_explain, ShapConfig, ShapOutput};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::importance::Explanation;
use crate::model::Predictor;

/// Which dataset an explainer is being fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRole {
    Original,
    Noisy,
}

impl FitRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Noisy => "noisy",
        }
    }
}

/// Explainer-specific side information reported next to an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplainDiagnostics {
    Lime {
        weighted_r2: Option<f64>,
        ridge_fallback: bool,
    },
    Shap {
        efficiency_residual: f64,
        std_errors: Vec<f64>,
    },
    Anchor {
        rule: AnchorRule,
    },
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutput {
    pub explanation: Explanation,
    pub diagnostics: ExplainDiagnostics,
}

pub trait FittedExplainer: Send + Sync {
    fn explain(&self, predictor: &dyn Predictor, x: &[f64], seed: u64) -> Result<ExplainOutput>;
}

pub trait Explainer: Send + Sync {
    /// Label used as the explanation's `source`.
    fn name(&self) -> &str;

    fn fit(&self, data: &Dataset, role: FitRole) -> Result<Arc<dyn FittedExplainer>>;
}

// ---------------------------------------------------------------------------
// Built-in explainers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BuiltinExplainer {
    Lime(LimeConfig),
    Shap(ShapConfig),
    Anchor(AnchorConfig),
}

impl BuiltinExplainer {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lime" => Ok(Self::Lime(LimeConfig::default())),
            "shap" => Ok(Self::Shap(ShapConfig::default())),
            "anchor" => Ok(Self::Anchor(AnchorConfig::default())),
            other => Err(Error::config(format!("unknown explainer '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Lime(_) => "lime",
            Self::Shap(_) => "shap",
            Self::Anchor(_) => "anchor",
        }
    }
}

/// A built-in explainer together with its fit options.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub method: BuiltinExplainer,
    pub fit: FitOptions,
}

struct FittedBuiltin {
    method: BuiltinExplainer,
    name: &'static str,
    state: ExplainerFitState,
}

impl Explainer for Builtin {
    fn name(&self) -> &str {
        self.method.label()
    }

    fn fit(&self, data: &Dataset, _role: FitRole) -> Result<Arc<dyn FittedExplainer>> {
        Ok(Arc::new(FittedBuiltin {
            method: self.method,
            name: self.method.label(),
            state: ExplainerFitState::refit(data, &self.fit)?,
        }))
    }
}

impl FittedExplainer for FittedBuiltin {
    fn explain(&self, predictor: &dyn Predictor, x: &[f64], seed: u64) -> Result<ExplainOutput> {
        let schema = self.state.data.schema().clone();
        let (scores, diagnostics) = match &self.method {
            BuiltinExplainer::Lime(cfg) => {
                let out = lime_like_explain(predictor, x, &self.state, cfg, seed)?;
                let diag = ExplainDiagnostics::Lime {
                    weighted_r2: out.weighted_r2,
                    ridge_fallback: out.ridge_fallback,
                };
                (out.scores, diag)
            }
            BuiltinExplainer::Shap(cfg) => {
                let out = shapley_sample_explain(predictor, x, &self.state.background, cfg, seed)?;
                let diag = ExplainDiagnostics::Shap {
                    efficiency_residual: out.efficiency_residual,
                    std_errors: out.std_errors,
                };
                (out.scores, diag)
            }
            BuiltinExplainer::Anchor(cfg) => {
                let rule = anchor_like_explain(predictor, x, &self.state, cfg)?;
                (rule.importance(x.len()), ExplainDiagnostics::Anchor { rule })
            }
        };
        Ok(ExplainOutput {
            explanation: Explanation::new(schema, scores, self.name)?,
            diagnostics,
        })
    }
}
