//! Background statistics an explainer is fitted on.
//!
//! Explainers never look at the training data directly; they see it through
//! an [`ExplainerFitState`]. Fitting the same explainer on the original and on
//! the noise-perturbed dataset yields two states, and the stability metric
//! compares the explanations produced from each.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::importance::FeatureKind;
use crate::rng::{label_tag, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Maximum number of rows kept as the background sample.
    pub background_size: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            background_size: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerFitState {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    /// For categorical features: distinct values ascending with their
    /// relative frequencies. Empty for numeric features.
    pub categories: Vec<Vec<(f64, f64)>>,
    /// For numeric features: the nine decile cut points. Empty for
    /// categorical features.
    pub deciles: Vec<Vec<f64>>,
    pub background: Vec<Vec<f64>>,
    pub data: Dataset,
}

/// Linear-interpolation quantile of ascending `sorted`.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ExplainerFitState {
    pub fn refit(data: &Dataset, opts: &FitOptions) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit an explainer on an empty dataset"));
        }
        if opts.background_size == 0 {
            return Err(Error::config("background_size must be positive"));
        }
        let n = data.n_rows() as f64;
        let d = data.n_features();
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        let mut categories = Vec::with_capacity(d);
        let mut deciles = Vec::with_capacity(d);
        for j in 0..d {
            let mut col = data.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            stds.push(var.sqrt());
            col.sort_by(f64::total_cmp);
            match data.schema().kind(j) {
                FeatureKind::Categorical => {
                    let mut freq: Vec<(f64, f64)> = Vec::new();
                    for v in col {
                        match freq.last_mut() {
                            Some((last, c)) if *last == v => *c += 1.0,
                            _ => freq.push((v, 1.0)),
                        }
                    }
                    freq.iter_mut().for_each(|(_, c)| *c /= n);
                    categories.push(freq);
                    deciles.push(Vec::new());
                }
                FeatureKind::Numeric => {
                    categories.push(Vec::new());
                    deciles.push((1..10).map(|k| quantile_sorted(&col, k as f64 / 10.0)).collect());
                }
            }
        }
        let background = if data.n_rows() <= opts.background_size {
            data.rows().to_vec()
        } else {
            let mut rng = rng_from(opts.seed, &[label_tag("background")]);
            let mut idx = sample(&mut rng, data.n_rows(), opts.background_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| data.row(i).to_vec()).collect()
        };
        Ok(Self {
            means,
            stds,
            categories,
            deciles,
            background,
            data: data.clone(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn is_categorical(&self, j: usize) -> bool {
        self.data.is_categorical(j)
    }

    /// Scale used to standardize feature `j`; a constant column gets 1.
    pub fn scale(&self, j: usize) -> f64 {
        if self.stds[j] > 0.0 {
            self.stds[j]
        } else {
            1.0
        }
    }

    /// Decile bin index (0..=9) of `v` for numeric feature `j`.
    pub fn decile_bin(&self, j: usize, v: f64) -> usize {
        self.deciles[j].partition_point(|&c| c <= v)
    }

    /// Most frequent value of categorical feature `j` (lowest value on ties).
    pub fn mode(&self, j: usize) -> Option<f64> {
        self.categories[j]
            .iter()
            .fold(None, |best: Option<(f64, f64)>, &(v, f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((v, f)),
            })
            .map(|(v, _)| v)
    }

    /// Per-feature baseline for faithfulness: mean for numeric features,
    /// mode for categorical ones.
    pub fn baseline(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| {
                if self.is_categorical(j) {
                    self.mode(j).unwrap_or(self.means[j])
                } else {
                    self.means[j]
                }
            })
            .collect()
    }
}
