//! `xagg` command-line front end.
//!
//! Settings are resolved as: built-in defaults, then the `--config` JSON
//! document (a pipeline config, or a run manifest written by an earlier
//! run), then command-line flags.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use xagg_core::bridge::{shared, BridgeAddress, BridgeClient, BridgeExplainer, BridgePredictor, DEFAULT_TIMEOUT};
use xagg_core::explainers::{train_forest, Explainer, ForestModel};
use xagg_core::ingest::{prepare, DatasetConfig, EncodingManifest, Prepared, RawTable};
use xagg_core::mcdm::{scores_to_weights, DecisionMatrix, McdmMethod, McdmScorer, MatrixSidecar};
use xagg_core::pipeline::{ExperimentData, Harness, PipelineConfig};
use xagg_core::rankagg::{AggregationInput, Aggregator};
use xagg_core::{synth, Error, Predictor, Ranking, Weights};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "xagg", version, about = "Aggregate feature-importance explanations by multi-criteria weighting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline config JSON, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-instance work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    mcdm: Option<McdmMethod>,
    #[arg(long, global = true)]
    agg: Option<Aggregator>,
    /// Comma-separated explainer names, e.g. lime,shap,anchor.
    #[arg(long, global = true, value_delimiter = ',')]
    explainers: Option<Vec<String>>,
    /// Route predictor and explainers through a bridge server:
    /// `tcp://host:port`, `replay:<transcript>`, or a command line.
    #[arg(long, global = true)]
    bridge: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "xagg-out")]
    out: PathBuf,
    /// Suppress progress messages (never data).
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Column-role config (label, dropped and categorical columns).
    #[arg(long = "dataset-config")]
    dataset_config: Option<PathBuf>,
    /// Label column, when no dataset config is given.
    #[arg(long)]
    label: Option<String>,
    /// Raw label value of the positive class.
    #[arg(long)]
    positive: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SynthKind {
    Planted,
    Linear,
    Wdbc,
    German,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a seeded synthetic dataset and its dataset config.
    Synth {
        kind: SynthKind,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
    },
    /// Train the reference random forest and report test accuracy.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Aggregate the explanations of one instance.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        /// Model written by `train`; retrained from the seed when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Row of the test partition.
        #[arg(long, conflicts_with = "instance")]
        index: Option<usize>,
        /// Encoded feature vector as a JSON array.
        #[arg(long)]
        instance: Option<String>,
    },
    /// Average-rank comparison of the components and the aggregate.
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short = 'n', long = "instances", default_value_t = 10)]
        n: usize,
    },
    /// Correlate rank-based metrics with their traditional counterparts.
    Rq1 {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short = 'n', long = "samples", default_value_t = 100)]
        n: usize,
    },
    /// Score a decision matrix CSV with TOPSIS or EDAS.
    Mcdm {
        #[arg(long)]
        matrix: PathBuf,
        /// JSON with `directions` and optional `weights`.
        #[arg(long)]
        directions: PathBuf,
    },
    /// Fuse rankings given as JSON `{"rankings": [...], "weights": [...]}`.
    Aggregate {
        #[arg(long)]
        input: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Synth { .. } => "synth",
            Cmd::Train { .. } => "train",
            Cmd::Explain { .. } => "explain",
            Cmd::Experiment { .. } => "experiment",
            Cmd::Rq1 { .. } => "rq1",
            Cmd::Mcdm { .. } => "mcdm",
            Cmd::Aggregate { .. } => "aggregate",
        }
    }
}

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Compute(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Compute(_) => 3,
            CliError::Core(e) => match e {
                Error::Config(_) => 1,
                Error::Data(_) | Error::Row { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
                Error::InvalidInput(_) | Error::Training { .. } | Error::Predictor(_) | Error::Bridge { .. } => 3,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(Error::Bridge { raw: Some(raw), .. }) = &e {
                eprintln!("offending line: {raw}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn resolve_config(g: &Global) -> CliResult<PipelineConfig> {
    let mut cfg = match &g.config {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let value = if value.get("manifest_version").is_some() {
                value.get("config").cloned().unwrap_or_default()
            } else {
                value
            };
            serde_json::from_value(value)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.mcdm {
        cfg.mcdm = m;
    }
    if let Some(a) = g.agg {
        cfg.aggregator = a;
    }
    if let Some(e) = &g.explainers {
        cfg.explainers = e.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if g.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    cfg.validate()?;
    if g.bridge.is_none() {
        cfg.builtin_explainers()?;
    }
    Ok(cfg)
}

fn dataset_config(args: &DataArgs) -> CliResult<DatasetConfig> {
    let mut dc = match (&args.dataset_config, &args.label) {
        (Some(p), _) => DatasetConfig::from_json(&read_to_string(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        (None, Some(label)) => DatasetConfig::with_label(label.clone()),
        (None, None) => {
            return Err(CliError::Usage("either --dataset-config or --label is required".into()))
        }
    };
    if let Some(l) = &args.label {
        dc.label.column = l.clone();
    }
    if let Some(p) = &args.positive {
        dc.label.positive = Some(p.clone());
    }
    if dc.name.is_empty() {
        dc.name = args
            .data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(dc)
}

struct Loaded {
    dc: DatasetConfig,
    prepared: Prepared,
}

fn load(args: &DataArgs, cfg: &PipelineConfig, m: &mut RunManifest) -> CliResult<Loaded> {
    let dc = dataset_config(args)?;
    m.record_input("data", &args.data)?;
    if let Some(p) = &args.dataset_config {
        m.record_input("dataset_config", p)?;
    }
    let t = Instant::now();
    let raw: RawTable = dc.load(&args.data)?;
    let prepared = prepare(&raw, &dc, &cfg.split_config())?;
    m.time("load", t);
    log::info!(
        "{}: {} rows loaded, {} dropped, {} features, {} train / {} test",
        dc.name,
        prepared.rows_loaded,
        prepared.rows_dropped,
        prepared.train.n_features(),
        prepared.train.n_rows(),
        prepared.test.n_rows()
    );
    m.dataset_config = Some(dc.clone());
    Ok(Loaded { dc, prepared })
}

fn write_output(out: &Path, name: &str, bytes: &[u8], m: &mut RunManifest) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(name);
    std::fs::write(&path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    m.record_output(name, bytes);
    Ok(path)
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Builds the harness, swapping in bridge-backed parts when requested.
fn harness(
    g: &Global,
    cfg: &PipelineConfig,
    loaded: &Loaded,
    model: Option<ForestModel>,
    m: &mut RunManifest,
) -> CliResult<Harness> {
    let data = ExperimentData::from_prepared(loaded.dc.name.clone(), loaded.prepared.clone());
    let t = Instant::now();
    let h = if let Some(addr) = &g.bridge {
        let transport = BridgeAddress::parse(addr)?.open()?;
        let client = BridgeClient::connect(transport, cfg.seed, DEFAULT_TIMEOUT)?;
        log::info!("bridge handshake: {:?}", client.info().capabilities);
        m.bridge = Some(client.info().clone());
        for name in &cfg.explainers {
            if !client.supports(name) {
                return Err(CliError::Usage(format!("bridge server does not offer explainer '{name}'")));
            }
        }
        let client = shared(client);
        let predictor = BridgePredictor::fit(Arc::clone(&client), &data.train)?;
        let explainers: Vec<Arc<dyn Explainer>> = cfg
            .explainers
            .iter()
            .map(|n| Arc::new(BridgeExplainer::new(Arc::clone(&client), n.clone())) as Arc<dyn Explainer>)
            .collect();
        let mut h = Harness::with_predictor(cfg, data, Arc::new(predictor), "bridge")?;
        h.set_explainers(explainers);
        h
    } else if let Some(forest) = model {
        if forest.n_features() != data.train.n_features() {
            return Err(CliError::Data(format!(
                "model expects {} features, dataset has {}",
                forest.n_features(),
                data.train.n_features()
            )));
        }
        let acc = forest.accuracy(&data.test)?;
        let mut h = Harness::with_predictor(cfg, data, Arc::new(forest), "forest")?;
        h.predictor_summary.test_accuracy = Some(acc);
        h
    } else {
        Harness::new(cfg, data)?
    };
    m.time("model", t);
    Ok(h)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    encoding: EncodingManifest,
    train_hash: String,
    test_accuracy: f64,
    majority_baseline: f64,
    forest: ForestModel,
}

const MODEL_FORMAT: &str = "xagg-model/1";

fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    let mut m = RunManifest::new(cli.cmd.name(), &cfg, g.jobs);
    let started = Instant::now();
    let result = dispatch(cli, &cfg, &mut m);
    m.time("total", started);
    // A manifest is written even when the command failed part-way.
    let bytes = json_bytes(&m)?;
    std::fs::create_dir_all(&g.out)
        .and_then(|_| std::fs::write(g.out.join("manifest.json"), bytes))
        .map_err(|e| CliError::Data(format!("cannot write manifest: {e}")))?;
    result
}

fn dispatch(cli: &Cli, cfg: &PipelineConfig, m: &mut RunManifest) -> CliResult<()> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Synth { kind, rows, features } => cmd_synth(g, cfg, *kind, *rows, *features, m),
        Cmd::Train { data } => cmd_train(g, cfg, data, m),
        Cmd::Explain {
            data,
            model,
            index,
            instance,
        } => cmd_explain(g, cfg, data, model.as_deref(), *index, instance.as_deref(), m),
        Cmd::Experiment { data, n } => cmd_experiment(g, cfg, data, *n, m),
        Cmd::Rq1 { data, n } => cmd_rq1(g, cfg, data, *n, m),
        Cmd::Mcdm { matrix, directions } => cmd_mcdm(g, cfg, matrix, directions, m),
        Cmd::Aggregate { input } => cmd_aggregate(g, cfg, input, m),
    }
}

fn dataset_to_table(data: &xagg_core::dataset::Dataset) -> RawTable {
    let mut columns = data.schema().names().to_vec();
    columns.push("label".into());
    let labels = data.labels().expect("synthetic data is labelled");
    let rows = data
        .rows()
        .iter()
        .zip(labels)
        .map(|(r, y)| {
            let mut row: Vec<Option<String>> = r.iter().map(|v| Some(format!("{v}"))).collect();
            row.push(Some(y.to_string()));
            row
        })
        .collect();
    RawTable { columns, rows }
}

fn cmd_synth(
    g: &Global,
    cfg: &PipelineConfig,
    kind: SynthKind,
    rows: usize,
    features: usize,
    m: &mut RunManifest,
) -> CliResult<()> {
    let (name, table, mut dc) = match kind {
        SynthKind::Planted => {
            if features < 5 {
                return Err(CliError::Usage("planted data needs at least 5 features".into()));
            }
            let d = synth::planted_nonlinear(rows, features, cfg.seed)?;
            ("planted", dataset_to_table(&d), DatasetConfig::with_label("label"))
        }
        SynthKind::Linear => {
            let d = synth::linear_fixture(rows, cfg.seed)?;
            ("linear", dataset_to_table(&d), DatasetConfig::with_label("label"))
        }
        SynthKind::Wdbc => {
            let mut dc = DatasetConfig::with_label("diagnosis");
            dc.label.positive = Some("M".into());
            dc.drop = vec!["id".into()];
            ("wdbc", synth::wdbc_like(cfg.seed), dc)
        }
        SynthKind::German => {
            let mut dc = DatasetConfig::with_label("class");
            dc.label.positive = Some("bad".into());
            dc.expected.rows = Some(1000);
            dc.expected.categorical = Some(13);
            dc.expected.numeric = Some(7);
            ("german", synth::german_like(cfg.seed), dc)
        }
    };
    dc.name = name.into();
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let path = write_output(&g.out, &format!("{name}.csv"), &csv, m)?;
    write_output(&g.out, &format!("{name}.dataset.json"), &json_bytes(&dc)?, m)?;
    println!("{} ({} rows)", path.display(), table.rows.len());
    Ok(())
}

fn cmd_train(g: &Global, cfg: &PipelineConfig, args: &DataArgs, m: &mut RunManifest) -> CliResult<()> {
    if g.bridge.is_some() {
        return Err(CliError::Usage("train builds the local reference model; --bridge does not apply".into()));
    }
    let loaded = load(args, cfg, m)?;
    let t = Instant::now();
    let forest = train_forest(&loaded.prepared.train, &cfg.forest_config())?;
    m.time("train", t);
    let test = &loaded.prepared.test;
    let acc = forest.accuracy(test)?;
    let labels = test.labels().expect("prepared data is labelled");
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        encoding: loaded.prepared.manifest.clone(),
        train_hash: loaded.prepared.train.content_hash(),
        test_accuracy: acc,
        majority_baseline: pos.max(1.0 - pos),
        forest,
    };
    let path = write_output(&g.out, "model.json", &json_bytes(&file)?, m)?;
    println!("test accuracy: {acc:.4} (majority baseline {:.4})", file.majority_baseline);
    println!("model: {}", path.display());
    Ok(())
}

fn load_model(path: &Path, loaded: &Loaded, m: &mut RunManifest) -> CliResult<ForestModel> {
    m.record_input("model", path)?;
    let file: ModelFile = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if file.format != MODEL_FORMAT {
        return Err(CliError::Data(format!("unsupported model format '{}'", file.format)));
    }
    if file.train_hash != loaded.prepared.train.content_hash() || file.encoding != loaded.prepared.manifest {
        return Err(CliError::Data(
            "model was trained on a different dataset, config or seed".into(),
        ));
    }
    Ok(file.forest)
}

fn cmd_explain(
    g: &Global,
    cfg: &PipelineConfig,
    args: &DataArgs,
    model: Option<&Path>,
    index: Option<usize>,
    instance: Option<&str>,
    m: &mut RunManifest,
) -> CliResult<()> {
    let loaded = load(args, cfg, m)?;
    let test = &loaded.prepared.test;
    let (x, id) = match (index, instance) {
        (Some(i), _) => {
            if i >= test.n_rows() {
                return Err(CliError::Usage(format!(
                    "--index {i} is out of range; the test partition has {} rows",
                    test.n_rows()
                )));
            }
            (test.row(i).to_vec(), i)
        }
        (None, Some(json)) => {
            let x: Vec<f64> = serde_json::from_str(json)
                .map_err(|e| CliError::Usage(format!("--instance is not a JSON array of numbers: {e}")))?;
            if x.len() != test.n_features() {
                return Err(CliError::Usage(format!(
                    "--instance has {} values, the encoded data has {} features",
                    x.len(),
                    test.n_features()
                )));
            }
            (x, 0)
        }
        (None, None) => return Err(CliError::Usage("either --index or --instance is required".into())),
    };
    let forest = model.map(|p| load_model(p, &loaded, m)).transpose()?;
    let h = harness(g, cfg, &loaded, forest, m)?;
    let t = Instant::now();
    let ctx = h.prepare()?;
    m.time("prepare", t);
    let t = Instant::now();
    let report = ctx.explain(h.predictor.as_ref() as &dyn Predictor, &x, id);
    m.time("explain", t);
    let path = write_output(&g.out, "report.json", &json_bytes(&report)?, m)?;
    if let Some(f) = &report.failure {
        return Err(CliError::Compute(format!(
            "stage {:?} failed: {} (partial report in {})",
            f.stage,
            f.message,
            path.display()
        )));
    }
    let agg = report.aggregate.as_ref().expect("complete report");
    println!("aggregate ranks: {:?}", agg.ranking.ranks());
    if let Some(w) = &report.weights {
        println!("weights: {:?}", w.values());
    }
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_experiment(g: &Global, cfg: &PipelineConfig, args: &DataArgs, n: usize, m: &mut RunManifest) -> CliResult<()> {
    let loaded = load(args, cfg, m)?;
    let h = harness(g, cfg, &loaded, None, m)?;
    let t = Instant::now();
    let report = h.run_experiment(n, g.jobs)?;
    m.time("experiment", t);
    write_output(&g.out, "experiment.json", &json_bytes(&report)?, m)?;
    let table = report.render_table();
    write_output(&g.out, "experiment.md", table.as_bytes(), m)?;
    print!("{table}");
    if !report.failures.is_empty() {
        log::warn!("{} of {n} instances failed; see experiment.json", report.failures.len());
    }
    if report.per_instance_ranks.is_empty() {
        return Err(CliError::Compute("every instance failed".into()));
    }
    Ok(())
}

fn cmd_rq1(g: &Global, cfg: &PipelineConfig, args: &DataArgs, n: usize, m: &mut RunManifest) -> CliResult<()> {
    let loaded = load(args, cfg, m)?;
    let h = harness(g, cfg, &loaded, None, m)?;
    let t = Instant::now();
    let report = h.run_rq1(n, g.jobs)?;
    m.time("rq1", t);
    write_output(&g.out, "rq1.json", &json_bytes(&report)?, m)?;
    let table = report.render_table();
    write_output(&g.out, "rq1.md", table.as_bytes(), m)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct McdmOutput {
    alternatives: Vec<String>,
    method: McdmMethod,
    scores: Vec<f64>,
    weights: Weights,
    notes: Vec<String>,
}

fn cmd_mcdm(g: &Global, cfg: &PipelineConfig, matrix: &Path, directions: &Path, m: &mut RunManifest) -> CliResult<()> {
    m.record_input("matrix", matrix)?;
    m.record_input("directions", directions)?;
    let sidecar: MatrixSidecar = serde_json::from_str(&read_to_string(directions)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", directions.display())))?;
    let file = std::fs::File::open(matrix)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", matrix.display())))?;
    let (labels, dm): (Vec<String>, DecisionMatrix) = DecisionMatrix::from_csv(file, &sidecar)?;
    let res = cfg.mcdm.score(&dm)?;
    let out = McdmOutput {
        alternatives: labels,
        method: res.method,
        weights: scores_to_weights(&res)?,
        scores: res.scores,
        notes: res.notes,
    };
    let bytes = json_bytes(&out)?;
    write_output(&g.out, "mcdm.json", &bytes, m)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

#[derive(Deserialize)]
struct AggregateInputFile {
    rankings: Vec<Ranking>,
    /// Equal weights when absent.
    #[serde(default)]
    weights: Option<Weights>,
}

fn cmd_aggregate(g: &Global, cfg: &PipelineConfig, input: &Path, m: &mut RunManifest) -> CliResult<()> {
    m.record_input("input", input)?;
    let file: AggregateInputFile = serde_json::from_str(&read_to_string(input)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let weights = match file.weights {
        Some(w) => w,
        None => Weights::uniform(file.rankings.len())?,
    };
    let ranking = cfg
        .aggregator
        .aggregate(&AggregationInput::new(file.rankings, weights)?)?;
    let bytes = json_bytes(&ranking)?;
    write_output(&g.out, "aggregate.json", &bytes, m)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}
