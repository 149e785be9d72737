//! Autoencoder-based noise for the stability metric.
//!
//! A small tanh autoencoder is trained on the (encoded, standardized) data.
//! Noise is generated per row by locating the row's nearest neighbours in
//! the latent space and copying a few feature values from one of them, so
//! that perturbed rows stay close to the data manifold.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{schema_hash, Dataset};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const MODEL_VERSION: &str = "xagg-autoencoder/1";

// ---------------------------------------------------------------------------
// Dense layers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn xavier(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        Self {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Per-parameter gradient buffers, laid out like the layer.
#[derive(Clone)]
struct LayerGrad {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros(l: &Layer) -> Self {
        Self {
            weights: vec![0.0; l.weights.len()],
            bias: vec![0.0; l.bias.len()],
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| *g = 0.0);
        self.bias.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Accumulate `delta ⊗ input` into the weight gradient.
    fn accumulate(&mut self, delta: &[f64], input: &[f64]) {
        let cols = input.len();
        for (r, &dr) in delta.iter().enumerate() {
            self.bias[r] += dr;
            let row = &mut self.weights[r * cols..(r + 1) * cols];
            for (g, &x) in row.iter_mut().zip(input) {
                *g += dr * x;
            }
        }
    }
}

/// `out = Wᵀ delta` for back-propagation through `layer`.
fn backprop_input(layer: &Layer, delta: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &dr) in delta.iter().enumerate() {
        let w = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
        for (o, &wv) in out.iter_mut().zip(w) {
            *o += wv * dr;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[LayerGrad]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let mut k = 0;
        for (layer, grad) in layers.iter_mut().zip(grads) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = grad.weights.iter().chain(grad.bias.iter());
            for (p, &g) in params.zip(gs) {
                self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
                self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
                let mh = self.m[k] / bc1;
                let vh = self.v[k] / bc2;
                *p -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
                k += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Autoencoder

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Latent width; `None` means `⌈d/2⌉`.
    pub latent: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent: None,
            epochs: 500,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// `d → h (tanh) → q → h (tanh) → d` with `h = ⌈(d+q)/2⌉`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    version: String,
    schema_hash: String,
    d: usize,
    q: usize,
    /// encoder hidden, latent, decoder hidden, output
    layers: Vec<Layer>,
    /// Full-data mean squared reconstruction error measured at the start of
    /// each epoch, before that epoch's update.
    loss_trace: Vec<f64>,
}

pub fn default_latent_width(d: usize) -> usize {
    d.div_ceil(2)
}

struct Activations {
    h1: Vec<f64>,
    z: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl Activations {
    fn new(d: usize, h: usize, q: usize) -> Self {
        Self {
            h1: vec![0.0; h],
            z: vec![0.0; q],
            h2: vec![0.0; h],
            out: vec![0.0; d],
        }
    }
}

impl AutoencoderModel {
    pub fn latent_width(&self) -> usize {
        self.q
    }

    pub fn input_width(&self) -> usize {
        self.d
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    fn forward(&self, x: &[f64], a: &mut Activations) {
        let [l1, l2, l3, l4] = &self.layers[..] else {
            unreachable!("autoencoder always has four layers")
        };
        l1.forward(x, &mut a.h1);
        a.h1.iter_mut().for_each(|v| *v = v.tanh());
        l2.forward(&a.h1, &mut a.z);
        l3.forward(&a.z, &mut a.h2);
        a.h2.iter_mut().for_each(|v| *v = v.tanh());
        l4.forward(&a.h2, &mut a.out);
    }

    fn run(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.d {
            return Err(Error::invalid(format!(
                "autoencoder expects {} features, got {}",
                self.d,
                x.len()
            )));
        }
        let mut a = Activations::new(self.d, self.layers[0].rows, self.q);
        self.forward(x, &mut a);
        Ok(a)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x)?.z)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x)?.out)
    }

    /// Mean over rows of the squared reconstruction error norm.
    pub fn mean_loss(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for r in rows {
            let out = self.reconstruct(r)?;
            total += r.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / rows.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::config(format!(
                "unsupported autoencoder version '{}'",
                m.version
            )));
        }
        let h = m.layers.first().map(|l| l.rows).unwrap_or(0);
        let shapes = [(h, m.d), (m.q, h), (h, m.q), (m.d, h)];
        let ok = m.layers.len() == 4
            && m.layers.iter().zip(shapes).all(|(l, (r, c))| {
                l.rows == r && l.cols == c && l.weights.len() == r * c && l.bias.len() == r
            });
        if !ok {
            return Err(Error::config("autoencoder layer shapes are inconsistent"));
        }
        Ok(m)
    }

    /// Fails unless `data` has the schema this model was trained on.
    pub fn check_schema(&self, data: &Dataset) -> Result<()> {
        if schema_hash(data.schema()) != self.schema_hash {
            return Err(Error::invalid(
                "dataset schema differs from the autoencoder's training schema",
            ));
        }
        Ok(())
    }
}

/// Full-batch Adam on mean squared reconstruction error.
pub fn train_autoencoder(data: &Dataset, cfg: &AutoencoderConfig) -> Result<AutoencoderModel> {
    let d = data.n_features();
    let q = cfg.latent.unwrap_or_else(|| default_latent_width(d));
    if q == 0 || q >= d {
        return Err(Error::config(format!(
            "latent width must satisfy 1 <= q < d, got q = {q}, d = {d}"
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("autoencoder needs at least one epoch"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot train an autoencoder on an empty dataset"));
    }
    let h = (d + q).div_ceil(2);
    let mut rng = rng_from(cfg.seed, &[crate::rng::label_tag("autoencoder")]);
    let layers = vec![
        Layer::xavier(h, d, &mut rng),
        Layer::xavier(q, h, &mut rng),
        Layer::xavier(h, q, &mut rng),
        Layer::xavier(d, h, &mut rng),
    ];
    let mut model = AutoencoderModel {
        version: MODEL_VERSION.into(),
        schema_hash: schema_hash(data.schema()),
        d,
        q,
        layers,
        loss_trace: Vec::with_capacity(cfg.epochs),
    };
    let n_params = model.layers.iter().map(Layer::n_params).sum();
    let mut adam = Adam::new(cfg.adam, n_params);
    let mut grads: Vec<LayerGrad> = model.layers.iter().map(LayerGrad::zeros).collect();
    let mut a = Activations::new(d, h, q);
    let mut d_out = vec![0.0; d];
    let mut d_h2 = vec![0.0; h];
    let mut d_z = vec![0.0; q];
    let mut d_h1 = vec![0.0; h];
    let n = data.n_rows() as f64;

    for epoch in 0..cfg.epochs {
        grads.iter_mut().for_each(LayerGrad::clear);
        let mut loss = 0.0;
        for x in data.rows() {
            model.forward(x, &mut a);
            for ((g, &o), &t) in d_out.iter_mut().zip(&a.out).zip(x) {
                let e = o - t;
                loss += e * e;
                *g = 2.0 * e / n;
            }
            grads[3].accumulate(&d_out, &a.h2);
            backprop_input(&model.layers[3], &d_out, &mut d_h2);
            for (g, &v) in d_h2.iter_mut().zip(&a.h2) {
                *g *= 1.0 - v * v;
            }
            grads[2].accumulate(&d_h2, &a.z);
            backprop_input(&model.layers[2], &d_h2, &mut d_z);
            grads[1].accumulate(&d_z, &a.h1);
            backprop_input(&model.layers[1], &d_z, &mut d_h1);
            for (g, &v) in d_h1.iter_mut().zip(&a.h1) {
                *g *= 1.0 - v * v;
            }
            grads[0].accumulate(&d_h1, x);
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("reconstruction loss became {loss}"),
            });
        }
        model.loss_trace.push(loss);
        adam.step(&mut model.layers, &grads);
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Latent neighbours

/// Encodings of every row of a dataset, cached for repeated neighbour queries.
pub struct LatentIndex<'a> {
    data: &'a Dataset,
    codes: Vec<Vec<f64>>,
}

impl<'a> LatentIndex<'a> {
    pub fn build(ae: &AutoencoderModel, data: &'a Dataset) -> Result<Self> {
        ae.check_schema(data)?;
        let codes = data
            .rows()
            .iter()
            .map(|r| ae.encode(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { data, codes })
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    /// The `k` rows nearest to `code` in Euclidean latent distance, skipping
    /// `exclude`. Ties go to the lower row index.
    pub fn nearest(&self, code: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
        let available = self.codes.len() - usize::from(exclude.is_some());
        if k == 0 || k > available {
            return Err(Error::config(format!(
                "K = {k} neighbours requested but only {available} candidate rows"
            )));
        }
        let mut cand: Vec<(f64, usize)> = self
            .codes
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, c)| {
                let dist: f64 = c.iter().zip(code).map(|(a, b)| (a - b).powi(2)).sum();
                (dist, i)
            })
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(cand.into_iter().take(k).map(|(_, i)| i).collect())
    }

    /// Neighbours of an arbitrary instance. The first row exactly equal to
    /// `x`, if any, is treated as `x` itself and excluded.
    pub fn neighbors_of(&self, ae: &AutoencoderModel, x: &[f64], k: usize) -> Result<Vec<usize>> {
        let code = ae.encode(x)?;
        let self_row = self.data.rows().iter().position(|r| r.as_slice() == x);
        self.nearest(&code, k, self_row)
    }
}

/// Indices of the `k` dataset rows whose encodings are closest to `x`'s.
pub fn latent_neighbors(
    ae: &AutoencoderModel,
    data: &Dataset,
    x: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    LatentIndex::build(ae, data)?.neighbors_of(ae, x, k)
}

// ---------------------------------------------------------------------------
// Feature-swap noise

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub k_neighbors: usize,
    /// Features replaced per row; `None` means `⌈d/4⌉`.
    pub m_features: Option<usize>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            m_features: None,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn resolved_m(&self, d: usize) -> usize {
        self.m_features.unwrap_or_else(|| d.div_ceil(4))
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        let m = self.resolved_m(d);
        if m == 0 || m > d {
            return Err(Error::config(format!(
                "m_features must lie in [1, {d}], got {m}"
            )));
        }
        if self.k_neighbors == 0 || self.k_neighbors >= n {
            return Err(Error::config(format!(
                "k_neighbors must lie in [1, {}), got {}",
                n,
                self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Replace `m` randomly chosen cells of every row with the values of one
/// randomly chosen latent neighbour. Rows are processed independently with
/// per-row random streams, so the output does not depend on thread count.
pub fn perturb_dataset(data: &Dataset, ae: &AutoencoderModel, cfg: &NoiseConfig) -> Result<Dataset> {
    let d = data.n_features();
    cfg.validate(d, data.n_rows())?;
    let m = cfg.resolved_m(d);
    let index = LatentIndex::build(ae, data)?;
    let rows = (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let neigh = index.nearest(&index.codes[i], cfg.k_neighbors, Some(i))?;
            let mut rng = rng_from(cfg.seed, &[crate::rng::label_tag("perturb"), i as u64]);
            let donor = data.row(neigh[rng.random_range(0..neigh.len())]);
            let mut row = data.row(i).to_vec();
            for j in sample(&mut rng, d, m) {
                row[j] = donor[j];
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    data.with_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> Dataset {
        let v = [1.0, -0.5, 0.8, 0.3, -1.2];
        let rows = (0..200)
            .map(|i| {
                let t = -1.5 + 3.0 * i as f64 / 199.0;
                v.iter().map(|c| c * t).collect()
            })
            .collect();
        Dataset::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_latent_not_smaller_than_input() {
        let cfg = AutoencoderConfig {
            latent: Some(5),
            ..Default::default()
        };
        assert!(matches!(
            train_autoencoder(&line_data(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = Dataset::from_rows(vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9]]).unwrap();
        let cfg = AutoencoderConfig {
            latent: Some(1),
            epochs: 1,
            seed: 3,
            adam: AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        };
        let model = train_autoencoder(&data, &cfg).unwrap();
        // Recompute the analytic gradient the same way training does.
        let d = 3;
        let h = model.layers[0].rows;
        let mut grads: Vec<LayerGrad> = model.layers.iter().map(LayerGrad::zeros).collect();
        let mut a = Activations::new(d, h, 1);
        let n = data.n_rows() as f64;
        for x in data.rows() {
            model.forward(x, &mut a);
            let d_out: Vec<f64> = a.out.iter().zip(x).map(|(o, t)| 2.0 * (o - t) / n).collect();
            grads[3].accumulate(&d_out, &a.h2);
            let mut d_h2 = vec![0.0; h];
            backprop_input(&model.layers[3], &d_out, &mut d_h2);
            for (g, &v) in d_h2.iter_mut().zip(&a.h2) {
                *g *= 1.0 - v * v;
            }
            grads[2].accumulate(&d_h2, &a.z);
            let mut d_z = vec![0.0; 1];
            backprop_input(&model.layers[2], &d_h2, &mut d_z);
            grads[1].accumulate(&d_z, &a.h1);
            let mut d_h1 = vec![0.0; h];
            backprop_input(&model.layers[1], &d_z, &mut d_h1);
            for (g, &v) in d_h1.iter_mut().zip(&a.h1) {
                *g *= 1.0 - v * v;
            }
            grads[0].accumulate(&d_h1, x);
        }
        let eps = 1e-6;
        for l in 0..4 {
            for w in 0..model.layers[l].weights.len() {
                let mut plus = model.clone();
                plus.layers[l].weights[w] += eps;
                let mut minus = model.clone();
                minus.layers[l].weights[w] -= eps;
                let fd = (plus.mean_loss(data.rows()).unwrap()
                    - minus.mean_loss(data.rows()).unwrap())
                    / (2.0 * eps);
                assert!(
                    (fd - grads[l].weights[w]).abs() < 1e-6,
                    "layer {l} weight {w}: fd {fd} vs {}",
                    grads[l].weights[w]
                );
            }
        }
    }

    #[test]
    fn line_fixture_trains_down() {
        let cfg = AutoencoderConfig {
            latent: Some(1),
            epochs: 500,
            seed: 11,
            ..Default::default()
        };
        let m = train_autoencoder(&line_data(), &cfg).unwrap();
        let t = m.loss_trace();
        assert_eq!(t.len(), 500);
        assert!(t.iter().all(|v| v.is_finite()));
        assert!(*t.last().unwrap() < 0.1 * t[0], "{} vs {}", t.last().unwrap(), t[0]);
    }

    #[test]
    fn constant_data_is_reconstructed() {
        let rows = vec![vec![0.8, -0.4, 0.3, 0.6, -0.9]; 200];
        let cfg = AutoencoderConfig {
            latent: Some(1),
            epochs: 3000,
            seed: 5,
            ..Default::default()
        };
        let m = train_autoencoder(&Dataset::from_rows(rows).unwrap(), &cfg).unwrap();
        let t = m.loss_trace();
        assert!(*t.last().unwrap() < 1e-3 * t[0], "{} vs {}", t.last().unwrap(), t[0]);
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let cfg = AutoencoderConfig {
            latent: Some(2),
            epochs: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train_autoencoder(&line_data(), &cfg).unwrap();
        let b = train_autoencoder(&line_data(), &cfg).unwrap();
        let bits = |m: &AutoencoderModel| m.loss_trace().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let back = AutoencoderModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let mut broken: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        broken["q"] = serde_json::json!(3);
        assert!(AutoencoderModel::from_json(&broken.to_string()).is_err());
    }

    fn small_model(data: &Dataset) -> AutoencoderModel {
        train_autoencoder(
            data,
            &AutoencoderConfig {
                latent: Some(1),
                epochs: 50,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn self_match_is_excluded() {
        let data = line_data();
        let ae = small_model(&data);
        let x = data.row(7).to_vec();
        let n = latent_neighbors(&ae, &data, &x, 1).unwrap();
        assert_ne!(n[0], 7);
        assert!(latent_neighbors(&ae, &data, &x, 200).is_err());
        assert!(latent_neighbors(&ae, &data, &x, 0).is_err());
    }

    #[test]
    fn equal_codes_break_ties_by_index() {
        let data = Dataset::from_rows(vec![vec![1.0, 2.0, 3.0]; 10]).unwrap();
        let ae = small_model(&data);
        let n = latent_neighbors(&ae, &data, &[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(n, vec![1, 2, 3]);
        let n = latent_neighbors(&ae, &data, &[0.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(n, vec![0, 1, 2]);
    }

    #[test]
    fn duplicated_rows_are_unchanged() {
        let data = Dataset::from_rows(vec![vec![0.5, -1.0, 2.0, 0.0]; 12]).unwrap();
        let ae = small_model(&data);
        let cfg = NoiseConfig {
            k_neighbors: 3,
            m_features: Some(4),
            seed: 2,
        };
        assert_eq!(perturb_dataset(&data, &ae, &cfg).unwrap(), data);
    }

    #[test]
    fn noise_config_bounds() {
        let ok = NoiseConfig::default();
        assert_eq!(ok.resolved_m(9), 3);
        assert!(ok.validate(9, 100).is_ok());
        assert!(ok.validate(9, 5).is_err());
        let zero = NoiseConfig {
            m_features: Some(0),
            ..ok
        };
        assert!(zero.validate(9, 100).is_err());
        let too_many = NoiseConfig {
            m_features: Some(10),
            ..ok
        };
        assert!(too_many.validate(9, 100).is_err());
    }
}
