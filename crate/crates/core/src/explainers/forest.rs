//! Reference black-box model: a bagged forest of Gini decision trees.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{label_tag, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Node {
    Leaf {
        p: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p } => return *p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    n_features: usize,
    config: ForestConfig,
    trees: Vec<Tree>,
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    cfg: &'a ForestConfig,
    max_features: usize,
    nodes: Vec<Node>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        self.nodes.push(Node::Leaf {
            p: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best (weighted child impurity, feature, threshold) among sampled features.
    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<(f64, usize, f64)> {
        let d = self.rows[0].len();
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.labels[i] == 1).count() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut features = sample(rng, d, self.max_features).into_vec();
        features.sort_unstable();
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0.0;
            for k in 0..order.len() - 1 {
                left_pos += f64::from(self.labels[order[k]]);
                let (v, next) = (self.rows[order[k]][f], self.rows[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let imp = (nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr)) / n;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, v + (next - v) / 2.0));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        if depth >= self.cfg.max_depth
            || idx.len() < self.cfg.min_samples_split
            || pos == 0
            || pos == idx.len()
        {
            return self.leaf(idx);
        }
        let Some((_, feature, threshold)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0 });
        let left = self.grow(&l, depth + 1, rng);
        let right = self.grow(&r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Trains the forest. Trees are independent and seeded by their index, so
/// the result does not depend on the thread count.
pub fn train_forest(train: &Dataset, cfg: &ForestConfig) -> Result<ForestModel> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::invalid("forest training needs labels"))?;
    if train.n_rows() < 2 {
        return Err(Error::invalid("forest training needs at least two rows"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Training {
            epoch: 0,
            message: "training labels contain a single class".into(),
        });
    }
    if cfg.n_trees == 0 || cfg.max_depth == 0 {
        return Err(Error::config("forest needs n_trees >= 1 and max_depth >= 1"));
    }
    let d = train.n_features();
    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let n = train.n_rows();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(cfg.seed, &[label_tag("tree"), t as u64]);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                rows: train.rows(),
                labels,
                cfg,
                max_features,
                nodes: Vec::new(),
            };
            b.grow(&idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        n_features: d,
        config: *cfg,
        trees,
    })
}

impl ForestModel {
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Fraction of rows whose thresholded prediction matches the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::invalid("accuracy needs labels"))?;
        let probs = self.predict_proba(data.rows())?;
        let hits = probs
            .iter()
            .zip(labels)
            .filter(|(p, &y)| u8::from(**p >= 0.5) == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

impl Predictor for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.n_features {
                    return Err(Error::Predictor(format!(
                        "row has {} features, forest expects {}",
                        r.len(),
                        self.n_features
                    )));
                }
                let sum: f64 = self.trees.iter().map(|t| t.predict(r)).sum();
                Ok(sum / self.trees.len() as f64)
            })
            .collect()
    }
}
