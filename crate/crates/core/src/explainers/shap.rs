//! Shapley value attributions with interventional (background) marginalization.
//!
//! The value of a coalition `S` is `v(S) = mean_b f(x_S, b_{-S})` over the
//! background rows. [`shapley_sample_explain`] estimates the Shapley values
//! of `v` by permutation sampling with one background row per permutation;
//! [`exact_shapley`] enumerates all coalitions and is meant for small `d`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{label_tag, rng_from};

/// Refuse exact enumeration beyond this many features.
pub const MAX_EXACT_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    pub n_permutations: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self { n_permutations: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapOutput {
    pub scores: Vec<f64>,
    /// Standard error of each estimate across permutations.
    pub std_errors: Vec<f64>,
    /// `f(x)` minus the mean background prediction.
    pub target_gap: f64,
    /// `|Σφ − target_gap|`.
    pub efficiency_residual: f64,
}

fn check_inputs(predictor: &dyn Predictor, x: &[f64], background: &[Vec<f64>]) -> Result<f64> {
    if background.is_empty() {
        return Err(Error::invalid("Shapley estimation needs a background sample"));
    }
    if x.len() != predictor.n_features() || background.iter().any(|b| b.len() != x.len()) {
        return Err(Error::invalid("instance and background widths differ"));
    }
    let mut rows = Vec::with_capacity(background.len() + 1);
    rows.push(x.to_vec());
    rows.extend(background.iter().cloned());
    let preds = predictor.predict_proba(&rows)?;
    if preds.len() != rows.len() {
        return Err(Error::Predictor("wrong number of predictions".into()));
    }
    let base = preds[1..].iter().sum::<f64>() / background.len() as f64;
    Ok(preds[0] - base)
}

pub fn shapley_sample_explain(
    predictor: &dyn Predictor,
    x: &[f64],
    background: &[Vec<f64>],
    cfg: &ShapConfig,
    seed: u64,
) -> Result<ShapOutput> {
    if cfg.n_permutations == 0 {
        return Err(Error::config("n_permutations must be positive"));
    }
    let target_gap = check_inputs(predictor, x, background)?;
    let d = x.len();
    let p = cfg.n_permutations;
    let mut rng = rng_from(seed, &[label_tag("shap")]);

    // Each permutation contributes a path of d + 1 rows from a background
    // row to x, switching one feature at a time.
    let mut orders = Vec::with_capacity(p);
    let mut rows = Vec::with_capacity(p * (d + 1));
    let mut perm: Vec<usize> = (0..d).collect();
    for _ in 0..p {
        perm.shuffle(&mut rng);
        let b = &background[rng.random_range(0..background.len())];
        let mut z = b.clone();
        rows.push(z.clone());
        for &j in &perm {
            z[j] = x[j];
            rows.push(z.clone());
        }
        orders.push(perm.clone());
    }
    let preds = predictor.predict_proba(&rows)?;
    if preds.len() != rows.len() || preds.iter().any(|v| !v.is_finite()) {
        return Err(Error::Predictor("invalid predictions for Shapley paths".into()));
    }

    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for (k, order) in orders.iter().enumerate() {
        let path = &preds[k * (d + 1)..(k + 1) * (d + 1)];
        for (step, &j) in order.iter().enumerate() {
            let c = path[step + 1] - path[step];
            sum[j] += c;
            sum_sq[j] += c * c;
        }
    }
    let pf = p as f64;
    let scores: Vec<f64> = sum.iter().map(|s| s / pf).collect();
    let std_errors = scores
        .iter()
        .zip(&sum_sq)
        .map(|(&m, &sq)| {
            if p < 2 {
                return 0.0;
            }
            let var = ((sq - pf * m * m) / (pf - 1.0)).max(0.0);
            (var / pf).sqrt()
        })
        .collect();
    let efficiency_residual = (scores.iter().sum::<f64>() - target_gap).abs();
    Ok(ShapOutput {
        scores,
        std_errors,
        target_gap,
        efficiency_residual,
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact Shapley values of `v(S) = mean_b f(x_S, b_{-S})` by enumerating
/// every coalition.
pub fn exact_shapley(predictor: &dyn Predictor, x: &[f64], background: &[Vec<f64>]) -> Result<ShapOutput> {
    let target_gap = check_inputs(predictor, x, background)?;
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::config(format!(
            "exact Shapley enumeration is limited to {MAX_EXACT_FEATURES} features"
        )));
    }
    let n_sets = 1usize << d;
    let mut rows = Vec::with_capacity(n_sets * background.len());
    for mask in 0..n_sets {
        for b in background {
            let z: Vec<f64> = (0..d)
                .map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] })
                .collect();
            rows.push(z);
        }
    }
    let preds = predictor.predict_proba(&rows)?;
    let nb = background.len();
    let value: Vec<f64> = (0..n_sets)
        .map(|mask| preds[mask * nb..(mask + 1) * nb].iter().sum::<f64>() / nb as f64)
        .collect();
    let df = factorial(d);
    let mut scores = vec![0.0; d];
    for (i, s) in scores.iter_mut().enumerate() {
        for mask in 0..n_sets {
            if mask >> i & 1 == 1 {
                continue;
            }
            let size = (mask as u64).count_ones() as usize;
            let weight = factorial(size) * factorial(d - size - 1) / df;
            *s += weight * (value[mask | 1 << i] - value[mask]);
        }
    }
    let efficiency_residual = (scores.iter().sum::<f64>() - target_gap).abs();
    Ok(ShapOutput {
        scores,
        std_errors: vec![0.0; d],
        target_gap,
        efficiency_residual,
    })
}
