//! Local linear surrogate explanations.
//!
//! Samples are drawn around the fit state's marginal distributions, weighted
//! by an exponential kernel on their standardized distance to the instance,
//! and a weighted least-squares linear model is fitted to the black-box
//! output. The surrogate's coefficients on the standardized features are the
//! importance scores.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fit::ExplainerFitState;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{label_tag, rng_from};

pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// `None` means `0.75 · √d`.
    pub kernel_width: Option<f64>,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            kernel_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeOutput {
    pub scores: Vec<f64>,
    pub intercept: f64,
    /// `None` when the black-box output is constant over the samples.
    pub weighted_r2: Option<f64>,
    pub ridge_fallback: bool,
}

/// Standardized representation of a sample relative to the instance:
/// numeric features are centred and scaled by the fit statistics,
/// categorical features become "same value as the instance" indicators.
fn represent(fit: &ExplainerFitState, x: &[f64], z: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            if fit.is_categorical(j) {
                f64::from(u8::from(z[j] == x[j]))
            } else {
                (z[j] - fit.means[j]) / fit.scale(j)
            }
        })
        .collect()
}

fn standardized_sq_distance(fit: &ExplainerFitState, x: &[f64], z: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| {
            if fit.is_categorical(j) {
                f64::from(u8::from(z[j] != x[j]))
            } else {
                ((z[j] - x[j]) / fit.scale(j)).powi(2)
            }
        })
        .sum()
}

fn draw_category(levels: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(v, f) in levels {
        acc += f;
        if u < acc {
            return v;
        }
    }
    levels.last().map(|l| l.0).unwrap_or(0.0)
}

pub fn lime_like_explain(
    predictor: &dyn Predictor,
    x: &[f64],
    fit: &ExplainerFitState,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<LimeOutput> {
    let d = fit.n_features();
    if x.len() != d {
        return Err(Error::invalid(format!(
            "instance has {} features, fit state has {d}",
            x.len()
        )));
    }
    if cfg.n_samples < d + 2 {
        return Err(Error::config(format!(
            "LIME needs at least d + 2 = {} samples",
            d + 2
        )));
    }
    let width = cfg.kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::config("kernel width must be positive"));
    }

    let mut rng = rng_from(seed, &[label_tag("lime")]);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    samples.push(x.to_vec());
    for _ in 1..cfg.n_samples {
        let z: Vec<f64> = (0..d)
            .map(|j| {
                if fit.is_categorical(j) {
                    draw_category(&fit.categories[j], rng.random::<f64>())
                } else {
                    let normal = Normal::new(fit.means[j], fit.stds[j]).expect("finite std");
                    normal.sample(&mut rng)
                }
            })
            .collect();
        samples.push(z);
    }
    let y = predictor.predict_proba(&samples)?;
    if y.len() != samples.len() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Predictor("invalid predictions for LIME samples".into()));
    }

    let n = samples.len();
    let mut design = DMatrix::<f64>::zeros(n, d + 1);
    let mut w = DVector::<f64>::zeros(n);
    for (i, z) in samples.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for (j, v) in represent(fit, x, z).into_iter().enumerate() {
            design[(i, j + 1)] = v;
        }
        w[i] = (-standardized_sq_distance(fit, x, z) / (width * width)).exp();
    }
    let yv = DVector::from_vec(y);
    let mut xtw = design.transpose();
    for (i, wi) in w.iter().enumerate() {
        xtw.column_mut(i).scale_mut(*wi);
    }
    let gram = &xtw * &design;
    let rhs = &xtw * &yv;
    let exact = gram
        .clone()
        .cholesky()
        .filter(|ch| is_well_conditioned(&gram, ch));
    let (beta, ridge_fallback) = match exact {
        Some(ch) => (ch.solve(&rhs), false),
        None => {
            let ridged = gram + DMatrix::<f64>::identity(d + 1, d + 1) * RIDGE;
            let ch = ridged
                .cholesky()
                .ok_or_else(|| Error::Predictor("LIME design is singular even with ridge".into()))?;
            (ch.solve(&rhs), true)
        }
    };

    let fitted = &design * &beta;
    let wsum: f64 = w.sum();
    let ybar = w.dot(&yv) / wsum;
    let ss_res: f64 = (0..n).map(|i| w[i] * (yv[i] - fitted[i]).powi(2)).sum();
    let ss_tot: f64 = (0..n).map(|i| w[i] * (yv[i] - ybar).powi(2)).sum();
    let constant = yv.iter().all(|&v| v == yv[0]);
    let weighted_r2 = (!constant && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);

    Ok(LimeOutput {
        scores: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        weighted_r2,
        ridge_fallback,
    })
}

/// Rejects Gram matrices whose Cholesky factor exists only numerically
/// (e.g. a feature column that never varies).
fn is_well_conditioned(gram: &DMatrix<f64>, ch: &Cholesky<f64, Dyn>) -> bool {
    let diag_max = gram.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_pivot = ch
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    min_pivot * min_pivot > 1e-12 * diag_max.max(1.0)
}
