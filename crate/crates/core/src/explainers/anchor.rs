//! Rule-based explanations converted to per-feature importance.
//!
//! A rule is a conjunction of single-feature conditions on the instance's
//! neighbourhood: the decile bin containing `x_i` for numeric features, the
//! exact value for categorical ones. Rules are grown greedily until the
//! model's prediction is preserved on at least `1 − ε` of the dataset rows
//! the rule covers. A conditioned feature `i` scores `1 − n_range_i / n`,
//! where `n_range_i` counts rows satisfying that feature's condition alone.

use serde::{Deserialize, Serialize};

use super::fit::ExplainerFitState;
use crate::error::{Error, Result};
use crate::model::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub epsilon: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { epsilon: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    /// `lo <= v < hi`; infinite ends are open.
    Interval { feature: usize, lo: f64, hi: f64 },
    Equals { feature: usize, value: f64 },
}

impl Condition {
    pub fn feature(&self) -> usize {
        match self {
            Self::Interval { feature, .. } | Self::Equals { feature, .. } => *feature,
        }
    }

    pub fn holds(&self, row: &[f64]) -> bool {
        match *self {
            Self::Interval { feature, lo, hi } => row[feature] >= lo && row[feature] < hi,
            Self::Equals { feature, value } => row[feature] == value,
        }
    }
}

/// Condition for feature `j` that `x` satisfies.
pub fn condition_for(fit: &ExplainerFitState, x: &[f64], j: usize) -> Condition {
    if fit.is_categorical(j) {
        return Condition::Equals {
            feature: j,
            value: x[j],
        };
    }
    let cuts = &fit.deciles[j];
    let bin = fit.decile_bin(j, x[j]);
    let lo = if bin == 0 { f64::NEG_INFINITY } else { cuts[bin - 1] };
    let hi = cuts.get(bin).copied().unwrap_or(f64::INFINITY);
    Condition::Interval { feature: j, lo, hi }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRule {
    /// In the order they were added.
    pub conditions: Vec<Condition>,
    pub precision: f64,
    /// Rows satisfying the whole rule.
    pub coverage: usize,
    /// `n_range_i` for each condition, aligned with `conditions`.
    pub n_range: Vec<usize>,
    pub n_rows: usize,
    pub target_reached: bool,
}

impl AnchorRule {
    /// `C_i = 1 − n_range_i / n` for conditioned features, 0 elsewhere.
    pub fn importance(&self, d: usize) -> Vec<f64> {
        let mut scores = vec![0.0; d];
        for (c, &nr) in self.conditions.iter().zip(&self.n_range) {
            scores[c.feature()] = 1.0 - nr as f64 / self.n_rows as f64;
        }
        scores
    }
}

fn precision_of(covered: &[bool], agree: &[bool]) -> (f64, usize) {
    let cov = covered.iter().filter(|&&c| c).count();
    if cov == 0 {
        return (0.0, 0);
    }
    let hits = covered.iter().zip(agree).filter(|(&c, &a)| c && a).count();
    (hits as f64 / cov as f64, cov)
}

pub fn anchor_like_explain(
    predictor: &dyn Predictor,
    x: &[f64],
    fit: &ExplainerFitState,
    cfg: &AnchorConfig,
) -> Result<AnchorRule> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::config(format!(
            "anchor epsilon must lie in (0, 1), got {}",
            cfg.epsilon
        )));
    }
    let d = fit.n_features();
    if x.len() != d {
        return Err(Error::invalid("instance width does not match fit state"));
    }
    let rows = fit.data.rows();
    let n = rows.len();
    let target = predictor.predict_one(x)? >= 0.5;
    let preds = predictor.predict_proba(rows)?;
    if preds.len() != n {
        return Err(Error::Predictor("wrong number of predictions".into()));
    }
    let agree: Vec<bool> = preds.iter().map(|&p| (p >= 0.5) == target).collect();

    let candidates: Vec<Condition> = (0..d).map(|j| condition_for(fit, x, j)).collect();
    let alone: Vec<Vec<bool>> = candidates
        .iter()
        .map(|c| rows.iter().map(|r| c.holds(r)).collect())
        .collect();

    let goal = 1.0 - cfg.epsilon;
    let mut covered = vec![true; n];
    let (mut precision, mut coverage) = precision_of(&covered, &agree);
    let mut used = vec![false; d];
    let mut chosen = Vec::new();
    while precision < goal && chosen.len() < d {
        let mut best: Option<(f64, usize, usize)> = None;
        for j in (0..d).filter(|&j| !used[j]) {
            let trial: Vec<bool> = covered.iter().zip(&alone[j]).map(|(&a, &b)| a && b).collect();
            let (p, cov) = precision_of(&trial, &agree);
            if best.is_none_or(|(bp, _, _)| p > bp) {
                best = Some((p, cov, j));
            }
        }
        let (p, cov, j) = best.expect("an unused feature remains");
        used[j] = true;
        chosen.push(j);
        for (c, &a) in covered.iter_mut().zip(&alone[j]) {
            *c = *c && a;
        }
        precision = p;
        coverage = cov;
    }

    Ok(AnchorRule {
        n_range: chosen
            .iter()
            .map(|&j| alone[j].iter().filter(|&&h| h).count())
            .collect(),
        conditions: chosen.iter().map(|&j| candidates[j].clone()).collect(),
        precision,
        coverage,
        n_rows: n,
        target_reached: precision >= goal,
    })
}
