//! End-to-end aggregation workflow.
//!
//! For one instance the workflow is: explain with every component explainer
//! (fit on the training data and, separately, on a feature-swap perturbed
//! copy of it), score each explanation on the three rank-based metrics, turn
//! the metric matrix into component weights with an MCDM scorer, fuse the
//! component rankings, and score the fused ranking with the same metric code.
//!
//! [`Harness`] repeats that over a seeded sample of test instances and ranks
//! the methods per metric, with Friedman / Finner significance counts.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::explainers::{
    train_forest, AnchorConfig, Builtin, BuiltinExplainer, ExplainDiagnostics, Explainer,
    ExplainerFitState, FitOptions, FitRole, FittedExplainer, ForestConfig, LimeConfig, ShapConfig,
};
use crate::importance::{rank_features, Explanation, Ranking, Weights};
use crate::ingest::{split, Prepared, SplitConfig};
use crate::mcdm::{scores_to_weights, DecisionMatrix, Direction, McdmMethod, McdmResult, McdmScorer};
use crate::metrics::{
    nrc, rank_faithfulness, rank_stability, traditional_complexity, traditional_faithfulness,
    traditional_sensitivity, MetricVector, NrcConfig,
};
use crate::model::Predictor;
use crate::perturb::{perturb_dataset, train_autoencoder, AdamConfig, AutoencoderConfig, NoiseConfig};
use crate::rankagg::{AggregationInput, Aggregator};
use crate::rng::{derive_seed, label_tag};
use crate::stats::{average_ranks, count_significantly_worse, friedman_test, spearman, FriedmanResult};

/// Source label of the fused explanation.
pub const AGGREGATE: &str = "aggregate";

/// Metric names in matrix column order.
pub const METRICS: [&str; 3] = ["nrc", "stability", "faithfulness"];

// ---------------------------------------------------------------------------
// Configuration

/// Reference values substituted for one feature at a time by the
/// faithfulness metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Training mean for numeric features, training mode for categorical ones.
    #[default]
    TrainingMean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub nrc: NrcConfig,
    pub baseline: BaselineMode,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            nrc: NrcConfig::default(),
            baseline: BaselineMode::TrainingMean,
        }
    }
}

/// Autoencoder and feature-swap settings. Seeds are derived from the master
/// seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    pub k_neighbors: usize,
    /// `None` means `⌈d/4⌉`.
    pub m_features: Option<usize>,
    /// Latent width; `None` means `⌈d/2⌉`.
    pub latent: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            m_features: None,
            latent: None,
            epochs: 500,
            learning_rate: 1e-3,
        }
    }
}

/// Directions and weights of the three metric criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriteriaConfig {
    pub directions: [Direction; 3],
    /// `None` means equal weights.
    pub weights: Option<[f64; 3]>,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self {
            directions: [Direction::Cost, Direction::Benefit, Direction::Benefit],
            weights: None,
        }
    }
}

impl CriteriaConfig {
    pub fn weights(&self) -> Result<Weights> {
        match self.weights {
            Some(w) => Weights::new(w.to_vec()),
            None => Weights::uniform(3),
        }
    }
}

/// Reference random forest settings; its seed comes from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: Option<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let f = ForestConfig::default();
        Self {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_samples_split: f.min_samples_split,
            max_features: f.max_features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub train_ratio: f64,
    pub stratified: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            stratified: true,
        }
    }
}

/// Everything that shapes a run. Every random stream is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Component explainer names, in report order.
    pub explainers: Vec<String>,
    pub lime: LimeConfig,
    pub shap: ShapConfig,
    pub anchor: AnchorConfig,
    /// Rows kept as the Shapley background sample.
    pub background_size: usize,
    pub metrics: MetricSettings,
    pub noise: NoiseSettings,
    pub mcdm: McdmMethod,
    pub aggregator: Aggregator,
    pub criteria: CriteriaConfig,
    pub model: ModelSettings,
    pub split: SplitSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            explainers: vec!["lime".into(), "shap".into(), "anchor".into()],
            lime: LimeConfig::default(),
            shap: ShapConfig::default(),
            anchor: AnchorConfig::default(),
            background_size: FitOptions::default().background_size,
            metrics: MetricSettings::default(),
            noise: NoiseSettings::default(),
            mcdm: McdmMethod::Topsis,
            aggregator: Aggregator::Wsum,
            criteria: CriteriaConfig::default(),
            model: ModelSettings::default(),
            split: SplitSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.explainers.is_empty() {
            return Err(Error::config("at least one explainer is required"));
        }
        self.metrics.nrc.validate()?;
        self.criteria.weights()?;
        if self.background_size == 0 {
            return Err(Error::config("background_size must be positive"));
        }
        if self.noise.epochs == 0 {
            return Err(Error::config("autoencoder epochs must be positive"));
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return Err(Error::config("train_ratio must lie in (0, 1)"));
        }
        Ok(())
    }

    fn tagged_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, &[label_tag(label)])
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.model.n_trees,
            max_depth: self.model.max_depth,
            min_samples_split: self.model.min_samples_split,
            max_features: self.model.max_features,
            bootstrap: true,
            seed: self.tagged_seed("forest"),
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_ratio: self.split.train_ratio,
            seed: self.tagged_seed("split"),
            stratified: self.split.stratified,
        }
    }

    pub fn autoencoder_config(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            latent: self.noise.latent,
            epochs: self.noise.epochs,
            seed: self.tagged_seed("autoencoder"),
            adam: AdamConfig {
                learning_rate: self.noise.learning_rate,
                ..AdamConfig::default()
            },
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            k_neighbors: self.noise.k_neighbors,
            m_features: self.noise.m_features,
            seed: self.tagged_seed("noise"),
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            background_size: self.background_size,
            seed: self.tagged_seed("fit"),
        }
    }

    /// Seed handed to every component explainer for one instance. The
    /// original-fit and noisy-fit explanations share it.
    pub fn explain_seed(&self, instance_id: usize, explainer: &str) -> u64 {
        derive_seed(
            self.seed,
            &[label_tag("explain"), instance_id as u64, label_tag(explainer)],
        )
    }

    /// The built-in explainers named in `explainers`.
    pub fn builtin_explainers(&self) -> Result<Vec<Arc<dyn Explainer>>> {
        self.explainers
            .iter()
            .map(|name| {
                let method = match BuiltinExplainer::from_name(name)? {
                    BuiltinExplainer::Lime(_) => BuiltinExplainer::Lime(self.lime),
                    BuiltinExplainer::Shap(_) => BuiltinExplainer::Shap(self.shap),
                    BuiltinExplainer::Anchor(_) => BuiltinExplainer::Anchor(self.anchor),
                };
                Ok(Arc::new(Builtin {
                    method,
                    fit: self.fit_options(),
                }) as Arc<dyn Explainer>)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prepare,
    Explain,
    Evaluate,
    Mcdm,
    Aggregate,
    EvaluateAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
    /// Offending bridge line, if the failure came from the bridge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl StageFailure {
    fn new(stage: Stage, err: Error) -> Self {
        let raw = match &err {
            Error::Bridge { raw, .. } => raw.clone(),
            _ => None,
        };
        Self {
            stage,
            message: err.to_string(),
            raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub name: String,
    pub explanation: Explanation,
    pub ranking: Ranking,
    pub diagnostics: ExplainDiagnostics,
    /// Same instance and seed, explainer fit on the perturbed training data.
    pub noisy_explanation: Explanation,
    pub noisy_diagnostics: ExplainDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub ranking: Ranking,
    /// Fusion of the noisy-fit component rankings under the same weights.
    pub noisy_ranking: Ranking,
    pub metrics: MetricVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub instance_id: usize,
    pub instance: Vec<f64>,
    pub components: Vec<ComponentResult>,
    /// One row per component, columns as in [`METRICS`].
    pub metric_matrix: Vec<MetricVector>,
    pub directions: [Direction; 3],
    pub criterion_weights: Weights,
    pub mcdm: Option<McdmResult>,
    /// Component weights used for the fusion.
    pub weights: Option<Weights>,
    pub aggregator: Aggregator,
    pub aggregate: Option<AggregateResult>,
    /// Degenerate cases that fired, in the order they were noticed.
    pub flags: Vec<String>,
    pub failure: Option<StageFailure>,
}

impl AggregationReport {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.aggregate.is_some()
    }

    /// Component rows followed by the aggregate row.
    pub fn method_metrics(&self) -> Option<Vec<MetricVector>> {
        let agg = self.aggregate.as_ref()?;
        let mut rows = self.metric_matrix.clone();
        rows.push(agg.metrics);
        Some(rows)
    }
}

// ---------------------------------------------------------------------------
// Per-instance workflow

/// Training data, its perturbed copy, and the explainers fitted to both.
pub struct PipelineContext {
    cfg: PipelineConfig,
    names: Vec<String>,
    /// Explainer names as reported by the explainers themselves; seeds are
    /// keyed on these so a repeated explainer reproduces its twin exactly.
    seed_keys: Vec<String>,
    original: Vec<Arc<dyn FittedExplainer>>,
    noisy: Vec<Arc<dyn FittedExplainer>>,
    baseline: Vec<f64>,
    noisy_hash: String,
    autoencoder_loss: (f64, f64),
}

impl PipelineContext {
    /// Trains the autoencoder, builds the perturbed training set, and fits
    /// every explainer to both datasets.
    pub fn prepare(
        cfg: &PipelineConfig,
        train: &Dataset,
        explainers: &[Arc<dyn Explainer>],
    ) -> Result<Self> {
        cfg.validate()?;
        if explainers.is_empty() {
            return Err(Error::config("at least one explainer is required"));
        }
        let ae = train_autoencoder(train, &cfg.autoencoder_config())?;
        let trace = ae.loss_trace();
        let autoencoder_loss = (trace[0], ae.mean_loss(train.rows())?);
        log::info!(
            "autoencoder loss {:.6} -> {:.6} over {} epochs",
            autoencoder_loss.0,
            autoencoder_loss.1,
            trace.len()
        );
        let noisy = perturb_dataset(train, &ae, &cfg.noise_config())?;

        let mut original_fits = Vec::with_capacity(explainers.len());
        let mut noisy_fits = Vec::with_capacity(explainers.len());
        for e in explainers {
            original_fits.push(e.fit(train, FitRole::Original)?);
            noisy_fits.push(e.fit(&noisy, FitRole::Noisy)?);
        }
        let baseline = match cfg.metrics.baseline {
            BaselineMode::TrainingMean => {
                ExplainerFitState::refit(train, &cfg.fit_options())?.baseline()
            }
            BaselineMode::Zero => vec![0.0; train.n_features()],
        };
        Ok(Self {
            cfg: cfg.clone(),
            names: unique_labels(explainers.iter().map(|e| e.name())),
            seed_keys: explainers.iter().map(|e| e.name().to_string()).collect(),
            original: original_fits,
            noisy: noisy_fits,
            baseline,
            noisy_hash: noisy.content_hash(),
            autoencoder_loss,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Component labels; repeated explainer names get a `#k` suffix.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    /// Content hash of the perturbed training data.
    pub fn noisy_hash(&self) -> &str {
        &self.noisy_hash
    }

    /// Autoencoder loss before training and after the last epoch.
    pub fn autoencoder_loss(&self) -> (f64, f64) {
        self.autoencoder_loss
    }

    /// Runs the whole workflow for `x`. Failures are reported in the returned
    /// report rather than as an error.
    pub fn explain(&self, predictor: &dyn Predictor, x: &[f64], instance_id: usize) -> AggregationReport {
        let cfg = &self.cfg;
        let criterion_weights = cfg.criteria.weights().expect("validated in prepare");
        let mut report = AggregationReport {
            instance_id,
            instance: x.to_vec(),
            components: Vec::new(),
            metric_matrix: Vec::new(),
            directions: cfg.criteria.directions,
            criterion_weights,
            mcdm: None,
            weights: None,
            aggregator: cfg.aggregator,
            aggregate: None,
            flags: Vec::new(),
            failure: None,
        };
        if let Err((stage, err)) = self.run_stages(predictor, x, instance_id, &mut report) {
            report.failure = Some(StageFailure::new(stage, err));
        }
        report
    }

    fn run_stages(
        &self,
        predictor: &dyn Predictor,
        x: &[f64],
        instance_id: usize,
        report: &mut AggregationReport,
    ) -> std::result::Result<(), (Stage, Error)> {
        let cfg = &self.cfg;
        if x.len() != predictor.n_features() || x.len() != self.baseline.len() {
            return Err((
                Stage::Explain,
                Error::invalid(format!(
                    "instance has {} features, model expects {}",
                    x.len(),
                    predictor.n_features()
                )),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err((Stage::Explain, Error::invalid("instance values must be finite")));
        }

        // explain
        for (k, name) in self.names.iter().enumerate() {
            let seed = cfg.explain_seed(instance_id, &self.seed_keys[k]);
            let orig = self.original[k]
                .explain(predictor, x, seed)
                .map_err(|e| (Stage::Explain, e))?;
            let noisy = self.noisy[k]
                .explain(predictor, x, seed)
                .map_err(|e| (Stage::Explain, e))?;
            let ranking = rank_features(&orig.explanation).map_err(|e| (Stage::Explain, e))?;
            flag_diagnostics(name, &orig.explanation, &orig.diagnostics, &mut report.flags);
            report.components.push(ComponentResult {
                name: name.clone(),
                explanation: orig.explanation,
                ranking,
                diagnostics: orig.diagnostics,
                noisy_explanation: noisy.explanation,
                noisy_diagnostics: noisy.diagnostics,
            });
        }

        // evaluate
        for c in &report.components {
            let row = evaluate(
                predictor,
                &c.explanation,
                &c.noisy_explanation,
                x,
                &self.baseline,
                &cfg.metrics.nrc,
            )
            .map_err(|e| (Stage::Evaluate, e))?;
            report.metric_matrix.push(row);
        }

        // mcdm
        let weights = if report.components.len() == 1 {
            report.flags.push("single component: MCDM skipped, weight 1".into());
            Weights::new(vec![1.0]).map_err(|e| (Stage::Mcdm, e))?
        } else {
            let res = (|| {
                let dm = DecisionMatrix::new(
                    report.metric_matrix.iter().map(|m| m.as_row().to_vec()).collect(),
                    cfg.criteria.directions.to_vec(),
                    report.criterion_weights.clone(),
                )?;
                cfg.mcdm.score(&dm)
            })()
            .map_err(|e| (Stage::Mcdm, e))?;
            report
                .flags
                .extend(res.notes.iter().map(|n| format!("{}: {n}", res.method)));
            let w = scores_to_weights(&res).map_err(|e| (Stage::Mcdm, e))?;
            report.mcdm = Some(res);
            w
        };
        report.weights = Some(weights.clone());

        // aggregate
        let fuse = |rankings: Vec<Ranking>| {
            cfg.aggregator
                .aggregate(&AggregationInput::new(rankings, weights.clone())?)
        };
        let agg = fuse(report.components.iter().map(|c| c.ranking.clone()).collect())
            .map_err(|e| (Stage::Aggregate, e))?;
        let noisy_rankings = report
            .components
            .iter()
            .map(|c| rank_features(&c.noisy_explanation))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| (Stage::Aggregate, e))?;
        let noisy_agg = fuse(noisy_rankings).map_err(|e| (Stage::Aggregate, e))?;
        if !agg.is_tie_free() {
            report.flags.push("aggregate ranking contains ties".into());
        }

        // evaluate aggregate, through the same code path as the components
        let metrics = (|| {
            let e = ranking_as_explanation(&agg)?;
            let e_noisy = ranking_as_explanation(&noisy_agg)?;
            evaluate(predictor, &e, &e_noisy, x, &self.baseline, &cfg.metrics.nrc)
        })()
        .map_err(|e| (Stage::EvaluateAggregate, e))?;
        report.aggregate = Some(AggregateResult {
            ranking: agg,
            noisy_ranking: noisy_agg,
            metrics,
        });
        Ok(())
    }
}

/// One-shot convenience: prepares a context for `train` and explains `x`.
/// A failure while preparing is reported as a [`Stage::Prepare`] failure.
pub fn explain_instance(
    cfg: &PipelineConfig,
    predictor: &dyn Predictor,
    train: &Dataset,
    explainers: &[Arc<dyn Explainer>],
    x: &[f64],
    instance_id: usize,
) -> AggregationReport {
    match PipelineContext::prepare(cfg, train, explainers) {
        Ok(ctx) => ctx.explain(predictor, x, instance_id),
        Err(e) => AggregationReport {
            instance_id,
            instance: x.to_vec(),
            components: Vec::new(),
            metric_matrix: Vec::new(),
            directions: cfg.criteria.directions,
            criterion_weights: cfg.criteria.weights().unwrap_or_else(|_| {
                Weights::uniform(3).expect("three criteria")
            }),
            mcdm: None,
            weights: None,
            aggregator: cfg.aggregator,
            aggregate: None,
            flags: Vec::new(),
            failure: Some(StageFailure::new(Stage::Prepare, e)),
        },
    }
}

/// The three rank-based metrics of an explanation. `noisy` is the explanation
/// of the same instance by the explainer fit on perturbed data.
pub fn evaluate(
    predictor: &dyn Predictor,
    original: &Explanation,
    noisy: &Explanation,
    x: &[f64],
    baseline: &[f64],
    nrc_cfg: &NrcConfig,
) -> Result<MetricVector> {
    let ranking = rank_features(original)?;
    Ok(MetricVector {
        nrc: nrc(&ranking, nrc_cfg),
        stability: rank_stability(original, noisy)?,
        faithfulness: rank_faithfulness(predictor, &ranking, x, baseline)?,
    })
}

/// Scores `1 / R_i`, so that ranking the result reproduces `r` exactly.
pub fn ranking_as_explanation(r: &Ranking) -> Result<Explanation> {
    let scores = r.ranks().iter().map(|&k| 1.0 / k as f64).collect();
    Explanation::new(r.schema().clone(), scores, AGGREGATE)
}

fn flag_diagnostics(name: &str, e: &Explanation, diag: &ExplainDiagnostics, flags: &mut Vec<String>) {
    if e.scores().iter().all(|&s| s == 0.0) {
        flags.push(format!("{name}: all importance scores are zero"));
    }
    match diag {
        ExplainDiagnostics::Lime { ridge_fallback: true, .. } => {
            flags.push(format!("{name}: ill-conditioned surrogate, ridge fallback used"));
        }
        ExplainDiagnostics::Lime { weighted_r2: None, .. } => {
            flags.push(format!("{name}: constant surrogate target"));
        }
        ExplainDiagnostics::Anchor { rule } if !rule.target_reached => {
            flags.push(format!("{name}: rule precision target not reached"));
        }
        _ => {}
    }
}

fn unique_labels<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        let seen = out
            .iter()
            .filter(|o| o.as_str() == n || o.starts_with(&format!("{n}#")))
            .count();
        out.push(if seen == 0 { n.to_string() } else { format!("{n}#{}", seen + 1) });
    }
    out
}

// ---------------------------------------------------------------------------
// Experiment harness

/// Train/test split the harness draws instances from.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    /// Splits an already-numeric labelled dataset with the configured split.
    pub fn from_dataset(name: impl Into<String>, data: &Dataset, cfg: &PipelineConfig) -> Result<Self> {
        let (train, test) = split(data, &cfg.split_config())?;
        Ok(Self {
            name: name.into(),
            train,
            test,
        })
    }

    pub fn from_prepared(name: impl Into<String>, prepared: Prepared) -> Self {
        Self {
            name: name.into(),
            train: prepared.train,
            test: prepared.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub features: Vec<String>,
    pub train_hash: String,
    pub test_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    /// `forest` for the built-in model, otherwise a free-form label.
    pub kind: String,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRanks {
    pub instance_id: usize,
    /// Per metric (in [`METRICS`] order), the rank of each method; 1 = best.
    pub ranks: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub average_ranks: Vec<f64>,
    /// For each method, how many other methods are significantly worse.
    pub significantly_worse: Vec<usize>,
    pub friedman: Option<FriedmanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: usize,
    pub failure: StageFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub predictor: PredictorSummary,
    /// Components in configured order, then the aggregate.
    pub methods: Vec<String>,
    pub instances: Vec<AggregationReport>,
    pub per_instance_ranks: Vec<InstanceRanks>,
    /// One entry per metric, empty if no instance completed.
    pub summary: Vec<MetricSummary>,
    pub failures: Vec<InstanceFailure>,
}

impl ExperimentReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Markdown table of average ranks with significance counts in
    /// parentheses, one row per method.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Method | NRC | Stability | Faithfulness |");
        let _ = writeln!(s, "|---|---|---|---|");
        for (i, m) in self.methods.iter().enumerate() {
            let _ = write!(s, "| {m} |");
            for summary in &self.summary {
                let _ = write!(
                    s,
                    " {:.2} ({}) |",
                    summary.average_ranks[i], summary.significantly_worse[i]
                );
            }
            if self.summary.is_empty() {
                s.push_str(" - | - | - |");
            }
            s.push('\n');
        }
        let n = self.per_instance_ranks.len();
        let _ = writeln!(
            s,
            "\nAverage rank over {n} instance{} (lower is better); parenthesized: methods significantly worse (Friedman + Finner, alpha 0.05).",
            if n == 1 { "" } else { "s" }
        );
        s
    }
}

/// Per-metric ranks of the methods within one instance: NRC ascending,
/// stability and faithfulness descending, ties averaged.
pub fn rank_methods(rows: &[MetricVector]) -> [Vec<f64>; 3] {
    let col = |f: fn(&MetricVector) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    [
        average_ranks(&col(|m| m.nrc)),
        average_ranks(&col(|m| -m.stability)),
        average_ranks(&col(|m| -m.faithfulness)),
    ]
}

/// Correlations between each rank-based metric and its traditional
/// counterpart over many explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Pair {
    pub instance_id: usize,
    pub explainer: String,
    pub nrc: f64,
    /// `None` when the explanation is all zeros.
    pub complexity: Option<f64>,
    pub rank_faithfulness: f64,
    pub faithfulness: f64,
    pub stability: f64,
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Correlation {
    pub criterion: String,
    pub rank_based: String,
    pub traditional: String,
    pub spearman: f64,
    /// Pairs used; pairs whose traditional value is undefined are skipped.
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub correlations: Vec<Rq1Correlation>,
    pub pairs: Vec<Rq1Pair>,
    pub failures: Vec<InstanceFailure>,
}

impl Rq1Report {
    pub fn render_table(&self) -> String {
        let mut s = String::from("| | ");
        s.push_str(
            &self
                .correlations
                .iter()
                .map(|c| format!("{} vs {}", c.rank_based, c.traditional))
                .collect::<Vec<_>>()
                .join(" | "),
        );
        s.push_str(" |\n|---|");
        s.push_str(&"---|".repeat(self.correlations.len()));
        s.push_str("\n| Spearman |");
        for c in &self.correlations {
            let _ = write!(s, " {:.3} (n={}) |", c.spearman, c.n_pairs);
        }
        s.push('\n');
        s
    }
}

/// A trained (or supplied) predictor, component explainers, and the data
/// they run on.
pub struct Harness {
    pub cfg: PipelineConfig,
    pub data: ExperimentData,
    pub predictor: Arc<dyn Predictor>,
    pub predictor_summary: PredictorSummary,
    pub explainers: Vec<Arc<dyn Explainer>>,
}

impl Harness {
    /// Trains the reference forest on the training split and uses the
    /// built-in explainers named in the config.
    pub fn new(cfg: &PipelineConfig, data: ExperimentData) -> Result<Self> {
        cfg.validate()?;
        let forest = train_forest(&data.train, &cfg.forest_config())?;
        let test_accuracy = if data.test.labels().is_some() {
            Some(forest.accuracy(&data.test)?)
        } else {
            None
        };
        Ok(Self {
            explainers: cfg.builtin_explainers()?,
            cfg: cfg.clone(),
            data,
            predictor: Arc::new(forest),
            predictor_summary: PredictorSummary {
                kind: "forest".into(),
                test_accuracy,
            },
        })
    }

    /// Uses an external predictor instead of training one.
    pub fn with_predictor(
        cfg: &PipelineConfig,
        data: ExperimentData,
        predictor: Arc<dyn Predictor>,
        kind: impl Into<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            explainers: cfg.builtin_explainers()?,
            cfg: cfg.clone(),
            data,
            predictor,
            predictor_summary: PredictorSummary {
                kind: kind.into(),
                test_accuracy: None,
            },
        })
    }

    pub fn set_explainers(&mut self, explainers: Vec<Arc<dyn Explainer>>) {
        self.explainers = explainers;
    }

    pub fn dataset_summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.data.name.clone(),
            n_train: self.data.train.n_rows(),
            n_test: self.data.test.n_rows(),
            n_features: self.data.train.n_features(),
            features: self.data.train.schema().names().to_vec(),
            train_hash: self.data.train.content_hash(),
            test_hash: self.data.test.content_hash(),
        }
    }

    /// Seeded sample of test-row indices, ascending.
    pub fn sample_instances(&self, n: usize) -> Result<Vec<usize>> {
        let available = self.data.test.n_rows();
        if n == 0 || n > available {
            return Err(Error::config(format!(
                "cannot sample {n} instances from {available} test rows"
            )));
        }
        let mut rng = crate::rng::rng_from(self.cfg.seed, &[label_tag("instances")]);
        let mut idx = rand::seq::index::sample(&mut rng, available, n).into_vec();
        idx.sort_unstable();
        Ok(idx)
    }

    pub fn prepare(&self) -> Result<PipelineContext> {
        PipelineContext::prepare(&self.cfg, &self.data.train, &self.explainers)
    }

    /// Runs `f` over `items` in order, on `jobs` threads when `jobs > 1`.
    fn map_instances<T: Send>(
        &self,
        items: &[usize],
        jobs: usize,
        f: impl Fn(usize) -> T + Sync + Send,
    ) -> Result<Vec<T>> {
        if jobs <= 1 {
            return Ok(items.iter().map(|&i| f(i)).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("cannot start {jobs} worker threads: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(|&i| f(i)).collect()))
    }

    pub fn run_experiment(&self, n_instances: usize, jobs: usize) -> Result<ExperimentReport> {
        let ids = self.sample_instances(n_instances)?;
        let ctx = self.prepare()?;
        let predictor = self.predictor.as_ref();
        let reports = self.map_instances(&ids, jobs, |i| {
            ctx.explain(predictor, self.data.test.row(i), i)
        })?;

        let mut methods = ctx.names().to_vec();
        methods.push(AGGREGATE.into());
        let mut per_instance_ranks = Vec::new();
        let mut failures = Vec::new();
        for r in &reports {
            match (&r.failure, r.method_metrics()) {
                (None, Some(rows)) => per_instance_ranks.push(InstanceRanks {
                    instance_id: r.instance_id,
                    ranks: rank_methods(&rows),
                }),
                (Some(f), _) => failures.push(InstanceFailure {
                    instance_id: r.instance_id,
                    failure: f.clone(),
                }),
                (None, None) => unreachable!("a report without failure has an aggregate"),
            }
        }
        let summary = summarize(&per_instance_ranks, methods.len())?;
        Ok(ExperimentReport {
            config: self.cfg.clone(),
            dataset: self.dataset_summary(),
            predictor: self.predictor_summary.clone(),
            methods,
            instances: reports,
            per_instance_ranks,
            summary,
            failures,
        })
    }

    pub fn run_rq1(&self, n_samples: usize, jobs: usize) -> Result<Rq1Report> {
        let ids = self.sample_instances(n_samples)?;
        let ctx = self.prepare()?;
        let predictor = self.predictor.as_ref();
        let per_instance = self.map_instances(&ids, jobs, |i| {
            rq1_pairs(&ctx, predictor, self.data.test.row(i), i)
        })?;
        let mut pairs = Vec::new();
        let mut failures = Vec::new();
        for (&i, res) in ids.iter().zip(per_instance) {
            match res {
                Ok(p) => pairs.extend(p),
                Err(e) => failures.push(InstanceFailure {
                    instance_id: i,
                    failure: StageFailure::new(Stage::Evaluate, e),
                }),
            }
        }
        let correlation = |criterion: &str, rank_based: &str, traditional: &str, xs: Vec<(f64, f64)>| {
            let (a, b): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
            let spearman = if a.len() >= 2 { spearman(&a, &b)? } else { 0.0 };
            Ok::<_, Error>(Rq1Correlation {
                criterion: criterion.into(),
                rank_based: rank_based.into(),
                traditional: traditional.into(),
                spearman,
                n_pairs: a.len(),
            })
        };
        let correlations = vec![
            correlation(
                "complexity",
                "nrc",
                "entropy",
                pairs.iter().filter_map(|p| Some((p.nrc, p.complexity?))).collect(),
            )?,
            correlation(
                "faithfulness",
                "rank_faithfulness",
                "faithfulness",
                pairs.iter().map(|p| (p.rank_faithfulness, p.faithfulness)).collect(),
            )?,
            correlation(
                "stability",
                "stability",
                "sensitivity",
                pairs.iter().filter_map(|p| Some((p.stability, p.sensitivity?))).collect(),
            )?,
        ];
        Ok(Rq1Report {
            config: self.cfg.clone(),
            dataset: self.dataset_summary(),
            correlations,
            pairs,
            failures,
        })
    }
}

fn rq1_pairs(
    ctx: &PipelineContext,
    predictor: &dyn Predictor,
    x: &[f64],
    instance_id: usize,
) -> Result<Vec<Rq1Pair>> {
    let cfg = ctx.config();
    let mut out = Vec::with_capacity(ctx.names.len());
    for (k, name) in ctx.names.iter().enumerate() {
        let seed = cfg.explain_seed(instance_id, &ctx.seed_keys[k]);
        let e = ctx.original[k].explain(predictor, x, seed)?.explanation;
        let e_noisy = ctx.noisy[k].explain(predictor, x, seed)?.explanation;
        let m = evaluate(predictor, &e, &e_noisy, x, &ctx.baseline, &cfg.metrics.nrc)?;
        let defined = |e: &Explanation| e.scores().iter().any(|&s| s != 0.0);
        out.push(Rq1Pair {
            instance_id,
            explainer: name.clone(),
            nrc: m.nrc,
            complexity: if defined(&e) { Some(traditional_complexity(&e)?) } else { None },
            rank_faithfulness: m.faithfulness,
            faithfulness: traditional_faithfulness(predictor, &e, x, &ctx.baseline)?,
            stability: m.stability,
            sensitivity: Some(traditional_sensitivity(&e, &e_noisy)?),
        });
    }
    Ok(out)
}

fn summarize(per_instance: &[InstanceRanks], k: usize) -> Result<Vec<MetricSummary>> {
    if per_instance.is_empty() {
        return Ok(Vec::new());
    }
    let n = per_instance.len() as f64;
    (0..3)
        .map(|m| {
            let blocks: Vec<Vec<f64>> = per_instance.iter().map(|r| r.ranks[m].clone()).collect();
            let mut avg = vec![0.0; k];
            for b in &blocks {
                for (a, r) in avg.iter_mut().zip(b) {
                    *a += r;
                }
            }
            avg.iter_mut().for_each(|a| *a /= n);
            let (friedman, significantly_worse) = if blocks.len() >= 2 && k >= 2 {
                let fr = friedman_test(&blocks)?;
                let counts = (0..k)
                    .map(|j| count_significantly_worse(&blocks, j))
                    .collect::<Result<Vec<_>>>()?;
                (Some(fr), counts)
            } else {
                (None, vec![0; k])
            };
            Ok(MetricSummary {
                metric: METRICS[m].into(),
                average_ranks: avg,
                significantly_worse,
                friedman,
            })
        })
        .collect()
}

/// Builds a harness around the reference forest and runs the experiment.
pub fn run_experiment(
    cfg: &PipelineConfig,
    data: ExperimentData,
    n_instances: usize,
    jobs: usize,
) -> Result<ExperimentReport> {
    Harness::new(cfg, data)?.run_experiment(n_instances, jobs)
}

/// Builds a harness around the reference forest and runs the metric
/// correlation study.
pub fn run_rq1(cfg: &PipelineConfig, data: ExperimentData, n_samples: usize, jobs: usize) -> Result<Rq1Report> {
    Harness::new(cfg, data)?.run_rq1(n_samples, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnPredictor;
    use crate::synth::{linear_fixture, linear_model};

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            seed: 5,
            lime: LimeConfig {
                n_samples: 300,
                kernel_width: None,
            },
            shap: ShapConfig { n_permutations: 32 },
            noise: NoiseSettings {
                epochs: 100,
                ..NoiseSettings::default()
            },
            ..PipelineConfig::default()
        }
    }

    fn linear_predictor() -> FnPredictor<impl Fn(&[f64]) -> f64 + Send + Sync> {
        FnPredictor::new(5, linear_model)
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = small_cfg();
        let back = PipelineConfig::from_json(&cfg.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = PipelineConfig::from_json(r#"{"seed": 9, "mcdm": "edas", "lime": {"n_samples": 50}}"#)
            .unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.mcdm, McdmMethod::Edas);
        assert_eq!(partial.lime.n_samples, 50);
        assert_eq!(partial.lime.kernel_width, None);
        assert_eq!(partial.aggregator, Aggregator::Wsum);
        assert!(PipelineConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"explainers": []}"#).is_err());
    }

    #[test]
    fn single_explainer_is_a_dictator() {
        let data = linear_fixture(120, 1).unwrap();
        let mut cfg = small_cfg();
        cfg.explainers = vec!["shap".into()];
        let f = linear_predictor();
        let r = explain_instance(&cfg, &f, &data, &cfg.builtin_explainers().unwrap(), data.row(3), 3);
        assert!(r.is_complete(), "{:?}", r.failure);
        assert_eq!(r.weights.as_ref().unwrap().values(), &[1.0]);
        assert_eq!(r.aggregate.unwrap().ranking.ranks(), r.components[0].ranking.ranks());
    }

    #[test]
    fn identical_components_get_equal_weights() {
        let data = linear_fixture(120, 2).unwrap();
        let mut cfg = small_cfg();
        cfg.explainers = vec!["lime".into(), "lime".into(), "lime".into()];
        let f = linear_predictor();
        for mcdm in [McdmMethod::Topsis, McdmMethod::Edas] {
            cfg.mcdm = mcdm;
            let r = explain_instance(&cfg, &f, &data, &cfg.builtin_explainers().unwrap(), data.row(0), 0);
            assert!(r.is_complete());
            let names: Vec<&str> = r.components.iter().map(|c| c.name.as_str()).collect();
            assert_eq!(names, ["lime", "lime#2", "lime#3"]);
            for w in r.weights.as_ref().unwrap().values() {
                assert!((w - 1.0 / 3.0).abs() < 1e-9);
            }
            assert_eq!(r.aggregate.unwrap().ranking.ranks(), r.components[0].ranking.ranks());
        }
    }

    #[test]
    fn aggregate_row_uses_component_code_path() {
        let data = linear_fixture(150, 3).unwrap();
        let cfg = small_cfg();
        let f = linear_predictor();
        let ctx = PipelineContext::prepare(&cfg, &data, &cfg.builtin_explainers().unwrap()).unwrap();
        let r = ctx.explain(&f, data.row(10), 10);
        let agg = r.aggregate.as_ref().unwrap();
        let e = ranking_as_explanation(&agg.ranking).unwrap();
        let e2 = ranking_as_explanation(&agg.noisy_ranking).unwrap();
        assert_eq!(rank_features(&e).unwrap().ranks(), agg.ranking.ranks());
        let m = evaluate(&f, &e, &e2, data.row(10), ctx.baseline(), &cfg.metrics.nrc).unwrap();
        assert_eq!(m, agg.metrics);
        let sum: f64 = r.weights.as_ref().unwrap().values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(r.metric_matrix.len(), 3);
    }

    #[test]
    fn stage_failure_is_tagged() {
        let data = linear_fixture(80, 4).unwrap();
        let cfg = small_cfg();
        let ctx = PipelineContext::prepare(&cfg, &data, &cfg.builtin_explainers().unwrap()).unwrap();
        let broken = FnPredictor::new(5, |_: &[f64]| f64::NAN);
        let r = ctx.explain(&broken, data.row(0), 0);
        let failure = r.failure.expect("NaN predictions must fail");
        assert_eq!(failure.stage, Stage::Explain);
        assert!(r.aggregate.is_none());
        assert!(r.metric_matrix.is_empty());
        let short = ctx.explain(&linear_predictor(), &[0.0; 3], 1);
        assert_eq!(short.failure.unwrap().stage, Stage::Explain);
    }

    #[test]
    fn method_ranks_follow_directions() {
        let rows = [
            MetricVector { nrc: 3.0, stability: 0.9, faithfulness: 0.1 },
            MetricVector { nrc: 2.0, stability: 0.9, faithfulness: 0.5 },
            MetricVector { nrc: 4.0, stability: 0.2, faithfulness: 0.3 },
        ];
        let [n, s, f] = rank_methods(&rows);
        assert_eq!(n, vec![2.0, 1.0, 3.0]);
        assert_eq!(s, vec![1.5, 1.5, 3.0]);
        assert_eq!(f, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn unique_labels_suffix_repeats() {
        let l = unique_labels(["a", "b", "a", "a"].into_iter());
        assert_eq!(l, ["a", "b", "a#2", "a#3"]);
    }

    #[test]
    fn single_instance_experiment_averages_equal_its_ranks() {
        let data = linear_fixture(200, 6).unwrap();
        let mut cfg = small_cfg();
        cfg.model.n_trees = 10;
        let exp = ExperimentData::from_dataset("linear", &data, &cfg).unwrap();
        let report = run_experiment(&cfg, exp, 1, 1).unwrap();
        assert_eq!(report.methods, ["lime", "shap", "anchor", "aggregate"]);
        assert_eq!(report.per_instance_ranks.len(), 1);
        for (m, s) in report.summary.iter().enumerate() {
            assert_eq!(s.average_ranks, report.per_instance_ranks[0].ranks[m]);
            assert!(s.friedman.is_none());
        }
        let table = report.render_table();
        assert_eq!(table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Method")).count(), 4);
    }
}
