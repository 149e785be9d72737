//! Seeded synthetic datasets used by tests, examples and the CLI `synth`
//! command. The table-shaped generators mimic the column layout of public
//! datasets so the shipped column-role configs can be exercised offline.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::importance::FeatureSchema;
use crate::ingest::RawTable;
use crate::rng::{label_tag, rng_from};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logit of the planted nonlinear signal over the first five features;
/// the remaining features are pure noise.
pub fn planted_logit(x: &[f64]) -> f64 {
    1.6 * x[0] * x[1] + 1.8 * (1.5 * x[2]).sin() + 0.9 * (x[3] * x[3] - 1.0) + 0.7 * x[4]
}

/// Standard-normal features with labels drawn from the planted signal.
pub fn planted_nonlinear(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    assert!(d >= 5, "planted signal uses five features");
    let mut rng = rng_from(seed, &[label_tag("planted")]);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = sigmoid(2.0 * planted_logit(&x));
        labels.push(u8::from(rng.random::<f64>() < p));
        rows.push(x);
    }
    Dataset::new(FeatureSchema::anonymous(d)?, rows, Some(labels))
}

pub const LINEAR_COEFS: [f64; 5] = [1.2, -0.8, 0.5, 0.0, -0.3];

/// Probability of the linear fixture's ground-truth logistic model.
pub fn linear_model(x: &[f64]) -> f64 {
    sigmoid(0.1 + x.iter().zip(LINEAR_COEFS).map(|(a, b)| a * b).sum::<f64>())
}

/// Five standard-normal features, labels from [`linear_model`].
pub fn linear_fixture(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from(seed, &[label_tag("linear")]);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
        labels.push(u8::from(rng.random::<f64>() < linear_model(&x)));
        rows.push(x);
    }
    Dataset::new(
        FeatureSchema::numeric(["x1", "x2", "x3", "x4", "x5"])?,
        rows,
        Some(labels),
    )
}

const WDBC_BASES: [(&str, f64, f64); 10] = [
    ("radius", 14.1, 3.5),
    ("texture", 19.3, 4.3),
    ("perimeter", 92.0, 24.3),
    ("area", 655.0, 352.0),
    ("smoothness", 0.096, 0.014),
    ("compactness", 0.104, 0.053),
    ("concavity", 0.089, 0.080),
    ("concave_points", 0.049, 0.039),
    ("symmetry", 0.181, 0.027),
    ("fractal_dimension", 0.063, 0.007),
];

/// WDBC-format table: `id`, `diagnosis` (M/B), then 30 measurements
/// (mean, standard error and worst value of ten cell-nucleus properties).
/// A latent malignancy score drives most measurements.
pub fn wdbc_like(seed: u64) -> RawTable {
    let n = 569;
    let n_malignant = 212;
    let mut rng = rng_from(seed, &[label_tag("wdbc")]);
    let mut columns = vec!["id".to_string(), "diagnosis".to_string()];
    for suffix in ["mean", "se", "worst"] {
        for (name, _, _) in WDBC_BASES {
            columns.push(format!("{name}_{suffix}"));
        }
    }
    // Per-property loading on the latent score; the last two properties are
    // only weakly related to the diagnosis.
    let loading = [0.9, 0.4, 0.9, 0.85, 0.35, 0.6, 0.7, 0.85, 0.3, 0.05];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let malignant = i < n_malignant;
        let shift: f64 = if malignant { 1.1 } else { -0.65 };
        let latent = shift + 0.7 * rng.sample::<f64, _>(StandardNormal);
        let mut row = vec![
            Some(format!("{}", 840_000 + i * 17)),
            Some(if malignant { "M" } else { "B" }.to_string()),
        ];
        for scale in [1.0, 0.12, 1.25] {
            for (p, (_, mean, sd)) in WDBC_BASES.iter().enumerate() {
                let z = loading[p] * latent
                    + (1.0 - loading[p] * loading[p]).sqrt() * rng.sample::<f64, _>(StandardNormal);
                let v = (mean + sd * z) * scale;
                let v = v.max(mean * scale * 0.05);
                row.push(Some(format!("{v:.5}")));
            }
        }
        rows.push(row);
    }
    // Shuffle rows so classes are interleaved.
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    RawTable { columns, rows }
}

const GERMAN_CATEGORICAL: [(&str, &[&str]); 13] = [
    ("checking_status", &["A11", "A12", "A13", "A14"]),
    ("credit_history", &["A30", "A31", "A32", "A33", "A34"]),
    ("purpose", &["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A48", "A49", "A410"]),
    ("savings_status", &["A61", "A62", "A63", "A64", "A65"]),
    ("employment", &["A71", "A72", "A73", "A74", "A75"]),
    ("personal_status", &["A91", "A92", "A93", "A94"]),
    ("other_parties", &["A101", "A102", "A103"]),
    ("property_magnitude", &["A121", "A122", "A123", "A124"]),
    ("other_payment_plans", &["A141", "A142", "A143"]),
    ("housing", &["A151", "A152", "A153"]),
    ("job", &["A171", "A172", "A173", "A174"]),
    ("own_telephone", &["A191", "A192"]),
    ("foreign_worker", &["A201", "A202"]),
];

const GERMAN_NUMERIC: [&str; 7] = [
    "duration",
    "credit_amount",
    "installment_commitment",
    "residence_since",
    "age",
    "existing_credits",
    "num_dependents",
];

/// German-credit-format table: 13 coded categorical attributes, 7 numeric
/// attributes and a `class` column with values `good`/`bad` (700/300).
pub fn german_like(seed: u64) -> RawTable {
    let n = 1000;
    let mut rng = rng_from(seed, &[label_tag("german")]);
    let mut columns: Vec<String> = Vec::new();
    // Interleave like the original attribute order.
    let order: [(bool, usize); 20] = [
        (true, 0), (false, 0), (true, 1), (true, 2), (false, 1), (true, 3), (true, 4),
        (false, 2), (true, 5), (true, 6), (false, 3), (true, 7), (false, 4), (true, 8),
        (true, 9), (false, 5), (true, 10), (false, 6), (true, 11), (true, 12),
    ];
    for &(cat, k) in &order {
        columns.push(if cat { GERMAN_CATEGORICAL[k].0 } else { GERMAN_NUMERIC[k] }.to_string());
    }
    columns.push("class".into());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let bad = i % 10 < 3;
        let risk: f64 = if bad { 0.8 } else { -0.35 } + 0.8 * normal.sample(&mut rng);
        let mut row = Vec::with_capacity(21);
        for &(cat, k) in &order {
            if cat {
                let levels = GERMAN_CATEGORICAL[k].1;
                // Risk tilts the first few attributes towards low codes.
                let tilt = if k < 4 { risk } else { 0.0 };
                let u: f64 = rng.random::<f64>() + 0.15 * tilt;
                let idx = ((1.0 - u.clamp(0.0, 0.999)) * levels.len() as f64) as usize;
                row.push(Some(levels[idx.min(levels.len() - 1)].to_string()));
            } else {
                let z = normal.sample(&mut rng);
                let v = match k {
                    0 => (20.0 + 8.0 * risk + 10.0 * z).round().clamp(4.0, 72.0),
                    1 => (3200.0 + 900.0 * risk + 2500.0 * z.abs()).round(),
                    2 => (3.0 + 0.4 * risk + z).round().clamp(1.0, 4.0),
                    3 => (2.8 + z).round().clamp(1.0, 4.0),
                    4 => (36.0 - 3.0 * risk + 11.0 * z).round().clamp(19.0, 75.0),
                    5 => (1.4 + 0.5 * z).round().clamp(1.0, 4.0),
                    _ => (1.15 + 0.35 * z).round().clamp(1.0, 2.0),
                };
                row.push(Some(format!("{v}")));
            }
        }
        row.push(Some(if bad { "bad" } else { "good" }.to_string()));
        rows.push(row);
    }
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    RawTable { columns, rows }
}

impl RawTable {
    /// Writes the table as CSV; missing cells are written as `?`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|c| c.as_deref().unwrap_or("?")))?;
        }
        out.flush()?;
        Ok(())
    }
}
