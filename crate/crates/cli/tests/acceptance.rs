//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false`; `cargo test --test acceptance` prints the
//! lines directly. The process exits non-zero when any criterion fails,
//! except for the entries in `KNOWN_TARGET_DEFECTS`, which are printed as
//! FAIL with their analysis but do not fail the build.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xagg_core::dataset::Dataset;
use xagg_core::explainers::shap::{exact_shapley, shapley_sample_explain, ShapConfig};
use xagg_core::explainers::{train_forest, ForestModel};
use xagg_core::ingest::{prepare, DatasetConfig, SplitConfig};
use xagg_core::mcdm::{edas, topsis, DecisionMatrix, Direction};
use xagg_core::metrics::{nrc, NrcConfig};
use xagg_core::perturb::{perturb_dataset, train_autoencoder, AutoencoderConfig, NoiseConfig};
use xagg_core::pipeline::{ExperimentData, Harness, PipelineConfig};
use xagg_core::rankagg::{AggregationInput, Aggregator};
use xagg_core::stats::{finner_posthoc, friedman_test, spearman};
use xagg_core::synth::{planted_nonlinear, wdbc_like};
use xagg_core::{FeatureKind, FeatureSchema, FnPredictor, Predictor, Ranking, Weights};

/// Criteria whose literal acceptance target is arithmetically
/// inconsistent with the formula it is meant to check. Each is printed as
/// FAIL together with the computed value; see the README.
const KNOWN_TARGET_DEFECTS: &[&str] = &[
    "nrc/hand-case-literal [1,2,3]",
    // 200 simultaneous 3-SE checks: an exactly calibrated estimator misses
    // one or more about 42% of the time (expected 0.54 misses). The
    // calibration line below is the blocking check for this estimator.
    "shapley/sampled within 3 SE of exact",
];

struct Outcome {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Run {
    outcomes: Vec<Outcome>,
}

impl Run {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome {
            name: name.into(),
            pass,
            detail,
        });
    }

    fn timed(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> (bool, String)) {
        let t = Instant::now();
        let (pass, detail) = f();
        let took = t.elapsed();
        let in_time = took <= limit;
        let detail = format!("{detail}; {:.2?} (limit {:?})", took, limit);
        self.record(name, pass && in_time, detail);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Competition ranks of random small integers, so ties are common.
fn random_tied_ranks(r: &mut ChaCha8Rng, d: usize) -> Vec<usize> {
    let levels = r.random_range(1..=d);
    let scores: Vec<f64> = (0..d).map(|_| r.random_range(0..levels) as f64).collect();
    common::competition_ranks(&scores)
}

fn ranking(ranks: Vec<usize>) -> Ranking {
    Ranking::new(FeatureSchema::anonymous(ranks.len()).unwrap(), ranks).unwrap()
}

// ---------------------------------------------------------------------------
// NRC

fn nrc_criteria(run: &mut Run) {
    let cfg = NrcConfig::default();
    run.timed("nrc/oracle 1000 tied rankings", Duration::from_secs(1), || {
        let mut r = rng(101);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let d = r.random_range(1..=50);
            let ranks = random_tied_ranks(&mut r, d);
            let got = nrc(&ranking(ranks.clone()), &cfg);
            worst = worst.max((got - common::nrc(&ranks, 0.5)).abs());
        }
        (worst <= 1e-9, format!("max |diff| = {worst:.2e} (tol 1e-9)"))
    });

    let hand_123 = 11.0 / 6.0 * 4f64.ln() * (1.0 + 0.5 * (2.0f64 / 3.0).sqrt());
    let got = nrc(&ranking(vec![1, 2, 3]), &cfg);
    run.record(
        "nrc/hand-case [1,2,3] formula",
        (got - hand_123).abs() <= 1e-9,
        format!("{got:.10} vs (11/6)·ln4·(1+0.5·√(2/3)) = {hand_123:.10}"),
    );
    run.record(
        "nrc/hand-case-literal [1,2,3]",
        (got - 3.5789).abs() <= 1e-4,
        format!(
            "{got:.6} vs stated 3.5789 (tol 1e-4), |diff| = {:.1e}; the stated \
             expression itself evaluates to {hand_123:.6}",
            (got - 3.5789).abs()
        ),
    );
    let got = nrc(&ranking(vec![1, 1, 1]), &cfg);
    run.record(
        "nrc/hand-case [1,1,1]",
        (got - 4.1589).abs() <= 1e-4,
        format!("{got:.6} vs 4.1589 (tol 1e-4)"),
    );
    let got = nrc(&ranking(vec![1]), &NrcConfig { alpha: 3.0 });
    run.record(
        "nrc/hand-case [1]",
        (got - 2f64.ln()).abs() <= 1e-12,
        format!("{got:.10} vs ln 2"),
    );
}

// ---------------------------------------------------------------------------
// MCDM

fn directions(benefit: &[bool]) -> Vec<Direction> {
    benefit
        .iter()
        .map(|&b| if b { Direction::Benefit } else { Direction::Cost })
        .collect()
}

fn mcdm_criteria(run: &mut Run) {
    run.timed("mcdm/oracles 100 random matrices", Duration::from_secs(5), || {
        let mut r = rng(202);
        let (mut wt, mut we) = (0.0f64, 0.0f64);
        for case in 0..100 {
            let m = r.random_range(2..=6);
            let n = r.random_range(1..=5);
            // Every fourth case includes negative entries to exercise the shift.
            let lo = if case % 4 == 0 { -1.0 } else { 0.0 };
            let x: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| r.random_range(lo..1.0)).collect()).collect();
            let benefit: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let dm = DecisionMatrix::new(x.clone(), directions(&benefit), Weights::new(w.clone()).unwrap()).unwrap();
            let t = topsis(&dm).scores;
            let e = edas(&dm).scores;
            let ot = common::topsis(&x, &w, &benefit, 1e-6);
            let oe = common::edas(&x, &w, &benefit);
            for i in 0..m {
                wt = wt.max((t[i] - ot[i]).abs());
                we = we.max((e[i] - oe[i]).abs());
            }
        }
        (
            wt <= 1e-9 && we <= 1e-9,
            format!("max |diff| TOPSIS {wt:.2e}, EDAS {we:.2e} (tol 1e-9)"),
        )
    });

    run.timed("mcdm/dominance 1000 planted matrices", Duration::from_secs(5), || {
        let mut r = rng(203);
        let mut violations = 0;
        for _ in 0..1000 {
            let m = r.random_range(2..=6);
            let n = r.random_range(1..=5);
            let benefit: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            let mut x: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| r.random_range(0.0..1.0)).collect()).collect();
            let star = r.random_range(0..m);
            let strict = r.random_range(0..n);
            for j in 0..n {
                let others = (0..m).filter(|&i| i != star).map(|i| x[i][j]);
                let best = if benefit[j] {
                    others.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    others.fold(f64::INFINITY, f64::min)
                };
                let gap = if j == strict || r.random_bool(0.5) { r.random_range(0.01..0.5) } else { 0.0 };
                x[star][j] = if benefit[j] { best + gap } else { best - gap };
            }
            let dm = DecisionMatrix::with_equal_weights(x, directions(&benefit)).unwrap();
            for scores in [topsis(&dm).scores, edas(&dm).scores] {
                if (0..m).any(|i| i != star && scores[i] >= scores[star]) {
                    violations += 1;
                }
            }
        }
        (violations == 0, format!("{violations} violations over 2000 scorings"))
    });
}

// ---------------------------------------------------------------------------
// Shapley

fn forest_fixture(d: usize) -> (ForestModel, Dataset) {
    let base = planted_nonlinear(500, 5, 31).unwrap();
    let rows: Vec<Vec<f64>> = base.rows().iter().map(|r| r[..d].to_vec()).collect();
    let data = Dataset::new(
        FeatureSchema::anonymous(d).unwrap(),
        rows,
        base.labels().map(|l| l.to_vec()),
    )
    .unwrap();
    let forest = train_forest(
        &data.subset(&(0..400).collect::<Vec<_>>()),
        &xagg_core::explainers::ForestConfig { seed: 5, ..Default::default() },
    )
    .unwrap();
    (forest, data)
}

fn shapley_criteria(run: &mut Run) {
    run.timed("shapley/exact efficiency d=2..4", Duration::from_secs(30), || {
        let mut worst = 0.0f64;
        for d in 2..=4 {
            let (forest, data) = forest_fixture(d);
            let bg = data.rows()[..30].to_vec();
            for i in 400..450 {
                let out = exact_shapley(&forest, data.row(i), &bg).unwrap();
                let gap = forest.predict_one(data.row(i)).unwrap()
                    - forest.predict_proba(&bg).unwrap().iter().sum::<f64>() / bg.len() as f64;
                worst = worst.max((out.scores.iter().sum::<f64>() - gap).abs());
            }
        }
        (worst <= 1e-9, format!("max |Σφ − gap| = {worst:.2e} over 150 instances (tol 1e-9)"))
    });

    run.timed("shapley/exact symmetry on duplicated features", Duration::from_secs(30), || {
        // Column 1 duplicates column 0 in the instance and the background,
        // and the forest is symmetrized over the pair.
        let (forest, data) = forest_fixture(4);
        let g = FnPredictor::new(4, move |x: &[f64]| {
            let swapped = [x[1], x[0], x[2], x[3]];
            0.5 * (forest.predict_one(x).unwrap() + forest.predict_one(&swapped).unwrap())
        });
        let dup = |r: &[f64]| vec![r[0], r[0], r[2], r[3]];
        let bg: Vec<Vec<f64>> = data.rows()[..30].iter().map(|r| dup(r)).collect();
        let mut worst = 0.0f64;
        for i in 400..450 {
            let out = exact_shapley(&g, &dup(data.row(i)), &bg).unwrap();
            worst = worst.max((out.scores[0] - out.scores[1]).abs());
        }
        (worst <= 1e-9, format!("max |φ0 − φ1| = {worst:.2e} over 50 instances (tol 1e-9)"))
    });

    let (forest, data) = forest_fixture(4);
    let bg = data.rows()[..30].to_vec();
    let cfg = ShapConfig { n_permutations: 200 };
    let t = Instant::now();
    let mut z = Vec::new();
    let mut outside = Vec::new();
    for (k, i) in (400..450).enumerate() {
        let x = data.row(i);
        let exact = exact_shapley(&forest, x, &bg).unwrap();
        let est = shapley_sample_explain(&forest, x, &bg, &cfg, 9000 + k as u64).unwrap();
        for j in 0..4 {
            let err = (est.scores[j] - exact.scores[j]).abs();
            let se = est.std_errors[j];
            z.push(if err == 0.0 { 0.0 } else if se == 0.0 { f64::INFINITY } else { err / se });
            if err > 3.0 * se + 1e-12 {
                outside.push(format!("instance {i} feature {j}: err {err:.4e} = {:.3} SE", err / se));
            }
        }
    }
    let took = t.elapsed();
    let detail = if outside.is_empty() {
        "all 200 estimates within 3 SE (200 permutations each)".to_string()
    } else {
        format!("{} of 200 estimates outside 3 SE: {}", outside.len(), outside.join("; "))
    };
    run.record(
        "shapley/sampled within 3 SE of exact",
        outside.is_empty() && took <= Duration::from_secs(30),
        format!("{detail}; {took:.2?} (limit 30s)"),
    );
    // Under correct calibration the number of |z| > 3 among 200 is
    // Binomial(200, 0.0027); P(count > 4) < 1e-3.
    let zmax = z.iter().cloned().fold(0.0, f64::max);
    run.record(
        "shapley/sampled calibration",
        outside.len() <= 4 && zmax < 5.0,
        format!("{} of 200 beyond 3 SE (allowed 4), max |z| {zmax:.2} (< 5)", outside.len()),
    );
}

// ---------------------------------------------------------------------------
// Rank aggregation

/// Index of the feature beating every other in weighted pairwise majority.
fn condorcet_winner(profile: &[Vec<usize>], w: &[f64]) -> Option<usize> {
    let d = profile[0].len();
    (0..d).find(|&a| {
        (0..d).filter(|&b| b != a).all(|b| {
            let margin: f64 = profile
                .iter()
                .zip(w)
                .map(|(r, wi)| match r[a].cmp(&r[b]) {
                    std::cmp::Ordering::Less => *wi,
                    std::cmp::Ordering::Greater => -wi,
                    std::cmp::Ordering::Equal => 0.0,
                })
                .sum();
            margin > 0.0
        })
    })
}

fn rankagg_criteria(run: &mut Run) {
    for agg in [Aggregator::Wsum, Aggregator::Borda, Aggregator::Condorcet] {
        let name = format!("{agg:?}").to_lowercase();
        run.timed(&format!("rankagg/{name} properties 1000 profiles"), Duration::from_secs(5), || {
            let mut r = rng(404);
            let (mut unan, mut dict, mut perm, mut cond, mut winners) = (0, 0, 0, 0, 0);
            for _ in 0..1000 {
                let d = r.random_range(2..=8);
                let k = r.random_range(2..=5);
                let profile: Vec<Vec<usize>> = (0..k).map(|_| random_tied_ranks(&mut r, d)).collect();
                let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
                let w = Weights::normalized(&raw).unwrap();
                let schema = FeatureSchema::anonymous(d).unwrap();
                let input = |p: &[Vec<usize>], s: &FeatureSchema, w: Weights| {
                    let rs = p.iter().map(|x| Ranking::new(s.clone(), x.clone()).unwrap()).collect();
                    AggregationInput::new(rs, w).unwrap()
                };

                // Unanimity.
                let same = vec![profile[0].clone(); k];
                if agg.aggregate(&input(&same, &schema, w.clone())).unwrap().ranks() != profile[0] {
                    unan += 1;
                }
                // Weight dictatorship.
                let dictator = r.random_range(0..k);
                let mut one_hot = vec![0.0; k];
                one_hot[dictator] = 1.0;
                let out = agg.aggregate(&input(&profile, &schema, Weights::new(one_hot).unwrap())).unwrap();
                if out.ranks() != profile[dictator] {
                    dict += 1;
                }
                // Feature permutation equivariance.
                let base = agg.aggregate(&input(&profile, &schema, w.clone())).unwrap();
                let mut p: Vec<usize> = (0..d).collect();
                p.shuffle(&mut r);
                let permuted: Vec<Vec<usize>> = profile.iter().map(|x| p.iter().map(|&i| x[i]).collect()).collect();
                let out = agg.aggregate(&input(&permuted, &schema.permuted(&p), w.clone())).unwrap();
                if out.ranks() != p.iter().map(|&i| base.ranks()[i]).collect::<Vec<_>>() {
                    perm += 1;
                }
                // Condorcet winner.
                if let Some(c) = condorcet_winner(&profile, w.values()) {
                    winners += 1;
                    let ranks = base.ranks();
                    if ranks[c] != 1 || ranks.iter().filter(|&&x| x == 1).count() != 1 {
                        cond += 1;
                    }
                }
            }
            let checked = if agg == Aggregator::Condorcet { cond } else { 0 };
            (
                unan + dict + perm + checked == 0,
                format!(
                    "violations: unanimity {unan}, dictatorship {dict}, permutation {perm}, \
                     condorcet-winner {cond} of {winners} profiles with a winner{}",
                    if agg == Aggregator::Condorcet { "" } else { " (informational: applies to condorcet only)" }
                ),
            )
        });
    }
}

// ---------------------------------------------------------------------------
// Statistics

fn stats_criteria(run: &mut Run) {
    run.timed("stats/oracles", Duration::from_secs(1), || {
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        let mut r = rng(505);
        let (mut wc, mut wp) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let n = r.random_range(2..=12);
            let k = r.random_range(2..=6);
            let blocks: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.random_range(0..4) as f64).collect()).collect();
            let got = friedman_test(&blocks).unwrap().chi_square;
            wc = wc.max((got - common::friedman_chi2(&blocks).max(0.0)).abs());
            let p: Vec<f64> = (0..r.random_range(1..=8)).map(|_| r.random_range(0.0..1.0)).collect();
            let adj = finner_posthoc(&p).unwrap();
            for (a, b) in adj.iter().zip(common::finner(&p)) {
                wp = wp.max((a - b).abs());
            }
        }
        let tied = friedman_test(&vec![vec![0.3, 0.3, 0.3]; 6]).unwrap();
        let pass = (rho - 0.8).abs() < 1e-12 && wc <= 1e-9 && wp <= 1e-9 && tied.p_value == 1.0 && tied.chi_square == 0.0;
        (
            pass,
            format!(
                "spearman {rho:.12}; max |Δχ²| {wc:.2e}; max |Δp_finner| {wp:.2e}; all-tied χ² {} p {}",
                tied.chi_square, tied.p_value
            ),
        )
    });
}

// ---------------------------------------------------------------------------
// RQ1 / RQ2

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn rq_criteria(run: &mut Run) {
    run.timed("rq1/sign and magnitude", Duration::from_secs(600), || {
        let data = planted_nonlinear(1000, 8, 7).unwrap();
        let cfg = PipelineConfig { seed: 7, ..Default::default() };
        let h = Harness::new(&cfg, ExperimentData::from_dataset("planted", &data, &cfg).unwrap()).unwrap();
        let rep = h.run_rq1(100, jobs()).unwrap();
        let rho: Vec<f64> = rep.correlations.iter().map(|c| c.spearman).collect();
        let n: Vec<usize> = rep.correlations.iter().map(|c| c.n_pairs).collect();
        let pass = rho[0] > 0.4 && rho[1] > 0.5 && rho[2] < -0.4 && rep.failures.is_empty();
        (
            pass,
            format!(
                "complexity {:.3} (> 0.4), faithfulness {:.3} (> 0.5), stability vs sensitivity {:.3} (< -0.4); pairs {n:?}",
                rho[0], rho[1], rho[2]
            ),
        )
    });

    run.timed("rq2/aggregate avoids worst on >= 2 of 3 metrics", Duration::from_secs(1800), || {
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for seed in 0..20u64 {
            let mut dc = DatasetConfig::with_label("diagnosis");
            dc.label.positive = Some("M".into());
            dc.drop = vec!["id".into()];
            let cfg = PipelineConfig { seed, ..Default::default() };
            let prep = prepare(&wdbc_like(seed), &dc, &cfg.split_config()).unwrap();
            let h = Harness::new(&cfg, ExperimentData::from_prepared("wdbc", prep)).unwrap();
            let rep = h.run_experiment(10, jobs()).unwrap();
            let agg = rep.methods.len() - 1;
            // A tie for worst counts as worst.
            let avoided = rep
                .summary
                .iter()
                .filter(|s| s.average_ranks[agg] < s.average_ranks.iter().cloned().fold(f64::MIN, f64::max))
                .count();
            if avoided >= 2 { good.push(seed) } else { bad.push(seed) }
        }
        (good.len() >= 16, format!("{} of 20 seeds (need 16); failing seeds {bad:?}", good.len()))
    });
}

// ---------------------------------------------------------------------------
// Determinism through the binary

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_xagg"))
        .arg("--quiet")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism_criteria(run: &mut Run) {
    run.timed("determinism/explain and experiment", Duration::from_secs(300), || {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        if let Err(e) = run_cli(root, &["--seed", "2", "synth", "planted", "--rows", "400", "--features", "6"]) {
            return (false, e);
        }
        let csv = root.join("planted.csv");
        let dc = root.join("planted.dataset.json");
        let data = ["--data", csv.to_str().unwrap(), "--dataset-config", dc.to_str().unwrap()];
        let mut mismatches = Vec::new();
        for (cmd, file, extra) in [
            ("explain", "report.json", vec!["--index", "3"]),
            ("experiment", "experiment.json", vec!["-n", "6"]),
        ] {
            let mut outputs = Vec::new();
            for (tag, jobs) in [("a", "1"), ("b", "1"), ("c", "4")] {
                let out = root.join(format!("{cmd}-{tag}"));
                let mut args = vec!["--seed", "13", "--jobs", jobs, cmd];
                args.extend(data);
                args.extend(extra.iter().copied());
                if let Err(e) = run_cli(&out, &args) {
                    return (false, format!("{cmd} failed: {e}"));
                }
                outputs.push(std::fs::read(out.join(file)).unwrap());
            }
            if outputs[0] != outputs[1] {
                mismatches.push(format!("{cmd}: run 1 vs run 2"));
            }
            if outputs[0] != outputs[2] {
                mismatches.push(format!("{cmd}: --jobs 1 vs --jobs 4"));
            }
        }
        let detail = if mismatches.is_empty() {
            "explain and experiment JSON byte-identical across reruns and --jobs 1/4".to_string()
        } else {
            mismatches.join("; ")
        };
        (mismatches.is_empty(), detail)
    });
}

// ---------------------------------------------------------------------------
// Autoencoder and perturbation

fn autoencoder_criteria(run: &mut Run) {
    run.timed("autoencoder/line fixture", Duration::from_secs(60), || {
        let v = [1.0, -0.5, 0.8, 0.3, -1.2];
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = -1.5 + 3.0 * i as f64 / 199.0;
                v.iter().map(|c| c * t).collect()
            })
            .collect();
        let data = Dataset::from_rows(rows).unwrap();
        let cfg = AutoencoderConfig { latent: Some(1), epochs: 500, seed: 11, ..Default::default() };
        let ae = train_autoencoder(&data, &cfg).unwrap();
        let initial = ae.loss_trace()[0];
        let last = ae.mean_loss(data.rows()).unwrap();
        (last < 0.1 * initial, format!("MSE {initial:.4} -> {last:.5} after 500 epochs (need < 0.1x)"))
    });

    run.timed("perturb/exactly m cells, in-dataset categorical values", Duration::from_secs(60), || {
        // Continuous rows with all-distinct values: every replaced cell
        // visibly changes, so the count must equal m exactly.
        let mut r = rng(606);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..9).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let cont = Dataset::from_rows(rows).unwrap();
        let ae = train_autoencoder(&cont, &AutoencoderConfig { epochs: 100, seed: 1, ..Default::default() }).unwrap();
        let cfg = NoiseConfig { seed: 2, ..Default::default() };
        let m = cfg.resolved_m(9);
        let noisy = perturb_dataset(&cont, &ae, &cfg).unwrap();
        let wrong_count = (0..cont.n_rows())
            .filter(|&i| cont.row(i).iter().zip(noisy.row(i)).filter(|(a, b)| a != b).count() != m)
            .count();

        // Encoded German-format data: categorical cells may coincide with
        // the donor, so at most m change, and changed values must occur in
        // the same column of the training data.
        let mut dc = DatasetConfig::with_label("class");
        dc.label.positive = Some("bad".into());
        let train = prepare(&xagg_core::synth::german_like(1), &dc, &SplitConfig::default()).unwrap().train;
        let d = train.n_features();
        let ae = train_autoencoder(&train, &AutoencoderConfig { epochs: 100, seed: 3, ..Default::default() }).unwrap();
        let noisy_g = perturb_dataset(&train, &ae, &NoiseConfig { seed: 4, ..Default::default() }).unwrap();
        let mg = NoiseConfig::default().resolved_m(d);
        let (mut over, mut foreign) = (0, 0);
        for i in 0..train.n_rows() {
            let changed: Vec<usize> = (0..d).filter(|&j| train.row(i)[j] != noisy_g.row(i)[j]).collect();
            if changed.len() > mg {
                over += 1;
            }
            for &j in &changed {
                if train.schema().kind(j) == FeatureKind::Categorical
                    && !train.rows().iter().any(|row| row[j] == noisy_g.row(i)[j])
                {
                    foreign += 1;
                }
            }
        }
        (
            wrong_count == 0 && over == 0 && foreign == 0,
            format!(
                "continuous: {wrong_count} of 300 rows without exactly m={m} changes; \
                 german: {over} rows over m={mg}, {foreign} out-of-dataset categorical values"
            ),
        )
    });
}

fn main() {
    let mut run = Run::default();
    nrc_criteria(&mut run);
    mcdm_criteria(&mut run);
    shapley_criteria(&mut run);
    rankagg_criteria(&mut run);
    stats_criteria(&mut run);
    autoencoder_criteria(&mut run);
    determinism_criteria(&mut run);
    rq_criteria(&mut run);

    let failed: Vec<&Outcome> = run.outcomes.iter().filter(|o| !o.pass).collect();
    let blocking: Vec<&&Outcome> = failed.iter().filter(|o| !KNOWN_TARGET_DEFECTS.contains(&o.name.as_str())).collect();
    println!(
        "\n{} criteria, {} passed, {} failed ({} known target defects)",
        run.outcomes.len(),
        run.outcomes.len() - failed.len(),
        failed.len(),
        failed.len() - blocking.len()
    );
    if !blocking.is_empty() {
        for o in &blocking {
            eprintln!("blocking failure: {} ({})", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
