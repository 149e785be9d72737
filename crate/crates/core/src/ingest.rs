//! CSV loading, categorical encoding, standardization and train/test splits.
//!
//! Preprocessing is captured in an [`EncodingManifest`]; applying the same
//! manifest to the same raw table reproduces the encoded matrix exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::importance::{FeatureKind, FeatureSchema};
use crate::rng::{label_tag, rng_from};

pub const DEFAULT_MISSING: [&str; 3] = ["", "NA", "?"];
pub const DEFAULT_ONEHOT_MAX: usize = 10;

// ---------------------------------------------------------------------------
// Raw tables

/// Rectangular table of optional string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    /// `None` marks a missing value.
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, delimiter: u8, missing: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if columns.is_empty() {
            return Err(Error::Data("CSV has no header".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            // Line 1 is the header.
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Row {
                row: line,
                message: e.to_string(),
            })?;
            if rec.len() != columns.len() {
                return Err(Error::Row {
                    row: line,
                    message: format!("{} fields, header has {}", rec.len(), columns.len()),
                });
            }
            rows.push(
                rec.iter()
                    .map(|c| (!missing.iter().any(|m| m == c)).then(|| c.to_string()))
                    .collect(),
            );
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found")))
    }

    /// True when every present value of column `j` parses as a finite number.
    pub fn is_numeric(&self, j: usize) -> bool {
        self.rows
            .iter()
            .filter_map(|r| r[j].as_deref())
            .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite))
    }

    pub fn n_missing_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.iter().any(Option::is_none)).count()
    }
}

pub fn load_csv(path: impl AsRef<Path>, delimiter: u8, missing: &[String]) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    RawTable::from_reader(std::io::BufReader::new(file), delimiter, missing)
}

// ---------------------------------------------------------------------------
// Dataset configuration

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    /// Raw value mapped to class 1. When absent the column must have exactly
    /// two distinct values and the larger one is positive.
    #[serde(default)]
    pub positive: Option<String>,
}

/// Table-level counts used to check a column-role config against the data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default)]
    pub categorical: Option<usize>,
    #[serde(default)]
    pub numeric: Option<usize>,
}

fn default_missing() -> Vec<String> {
    DEFAULT_MISSING.iter().map(|s| s.to_string()).collect()
}

fn default_onehot_max() -> usize {
    DEFAULT_ONEHOT_MAX
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(default)]
    pub name: String,
    pub label: LabelSpec,
    /// Columns ignored entirely (identifiers, leakage).
    #[serde(default)]
    pub drop: Vec<String>,
    /// Columns treated as categorical even if their values parse as numbers.
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_onehot_max")]
    pub onehot_max: usize,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub expected: ExpectedCounts,
}

impl DatasetConfig {
    pub fn with_label(column: impl Into<String>) -> Self {
        Self {
            name: String::new(),
            label: LabelSpec {
                column: column.into(),
                positive: None,
            },
            drop: Vec::new(),
            categorical: Vec::new(),
            onehot_max: DEFAULT_ONEHOT_MAX,
            missing: default_missing(),
            delimiter: ',',
            expected: ExpectedCounts::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        if !cfg.delimiter.is_ascii() {
            return Err(Error::config("delimiter must be a single ASCII character"));
        }
        Ok(cfg)
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<RawTable> {
        load_csv(path, self.delimiter as u8, &self.missing)
    }
}

// ---------------------------------------------------------------------------
// Encoding manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum ColumnEncoding {
    /// Standardized as `(v − mean) / scale`.
    Numeric { source: String, mean: f64, scale: f64 },
    /// One indicator column per category, in the listed order.
    OneHot { source: String, categories: Vec<String> },
    /// Integer code = position in `categories`.
    Label { source: String, categories: Vec<String> },
}

impl ColumnEncoding {
    fn source(&self) -> &str {
        match self {
            Self::Numeric { source, .. } | Self::OneHot { source, .. } | Self::Label { source, .. } => source,
        }
    }

    fn width(&self) -> usize {
        match self {
            Self::OneHot { categories, .. } => categories.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingManifest {
    pub label: LabelSpec,
    /// Resolved positive label value.
    pub positive: String,
    pub columns: Vec<ColumnEncoding>,
}

fn sort_values(values: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = values.into_iter().collect();
    let numeric: Option<Vec<f64>> = v.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        v = pairs.into_iter().map(|p| p.1).collect();
    }
    v
}

impl EncodingManifest {
    /// Infers column types and category sets from rows without missing
    /// values. Numeric columns start with identity standardization.
    pub fn infer(raw: &RawTable, cfg: &DatasetConfig) -> Result<Self> {
        let label_idx = raw.column_index(&cfg.label.column)?;
        for name in cfg.drop.iter().chain(&cfg.categorical) {
            raw.column_index(name)?;
        }
        let complete: Vec<&Vec<Option<String>>> =
            raw.rows.iter().filter(|r| r.iter().all(Option::is_some)).collect();
        if complete.is_empty() {
            return Err(Error::Data("no rows left after dropping missing values".into()));
        }
        let distinct = |j: usize| -> BTreeSet<String> {
            complete.iter().map(|r| r[j].clone().unwrap()).collect()
        };

        let label_values = sort_values(distinct(label_idx));
        let positive = match &cfg.label.positive {
            Some(p) => {
                if !label_values.contains(p) {
                    return Err(Error::Data(format!(
                        "positive label '{p}' does not occur in column '{}'",
                        cfg.label.column
                    )));
                }
                p.clone()
            }
            None if label_values.len() == 2 => label_values[1].clone(),
            None => {
                return Err(Error::Data(format!(
                    "label column '{}' has {} distinct values; set the positive value explicitly",
                    cfg.label.column,
                    label_values.len()
                )))
            }
        };

        let mut columns = Vec::new();
        let (mut n_cat, mut n_num) = (0, 0);
        for (j, name) in raw.columns.iter().enumerate() {
            if j == label_idx || cfg.drop.contains(name) {
                continue;
            }
            let forced = cfg.categorical.contains(name);
            let numeric = !forced && complete.iter().all(|r| {
                r[j].as_deref()
                    .is_some_and(|v| v.parse::<f64>().is_ok_and(f64::is_finite))
            });
            if numeric {
                n_num += 1;
                columns.push(ColumnEncoding::Numeric {
                    source: name.clone(),
                    mean: 0.0,
                    scale: 1.0,
                });
            } else {
                n_cat += 1;
                let categories = sort_values(distinct(j));
                columns.push(if categories.len() <= cfg.onehot_max {
                    ColumnEncoding::OneHot {
                        source: name.clone(),
                        categories,
                    }
                } else {
                    ColumnEncoding::Label {
                        source: name.clone(),
                        categories,
                    }
                });
            }
        }
        if columns.is_empty() {
            return Err(Error::Data("no feature columns remain".into()));
        }
        let check = |what: &str, expected: Option<usize>, actual: usize| match expected {
            Some(e) if e != actual => Err(Error::Data(format!(
                "config '{}' expects {e} {what}, found {actual}",
                cfg.name
            ))),
            _ => Ok(()),
        };
        check("rows", cfg.expected.rows, raw.rows.len())?;
        check("categorical features", cfg.expected.categorical, n_cat)?;
        check("numeric features", cfg.expected.numeric, n_num)?;
        Ok(Self {
            label: cfg.label.clone(),
            positive,
            columns,
        })
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        for c in &self.columns {
            match c {
                ColumnEncoding::Numeric { source, .. } => {
                    names.push(source.clone());
                    kinds.push(FeatureKind::Numeric);
                }
                ColumnEncoding::OneHot { source, categories } => {
                    for cat in categories {
                        names.push(format!("{source}={cat}"));
                        kinds.push(FeatureKind::Categorical);
                    }
                }
                ColumnEncoding::Label { source, .. } => {
                    names.push(source.clone());
                    kinds.push(FeatureKind::Categorical);
                }
            }
        }
        FeatureSchema::new(names, kinds)
    }

    pub fn n_features(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Encodes `raw`, dropping rows with any missing cell in a used column.
    /// Returns the dataset and the indices of the raw rows it kept.
    pub fn apply(&self, raw: &RawTable) -> Result<(Dataset, Vec<usize>)> {
        let label_idx = raw.column_index(&self.label.column)?;
        let sources = self
            .columns
            .iter()
            .map(|c| raw.column_index(c.source()))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut kept = Vec::new();
        for (i, r) in raw.rows.iter().enumerate() {
            if r[label_idx].is_none() || sources.iter().any(|&j| r[j].is_none()) {
                continue;
            }
            let mut out = Vec::with_capacity(self.n_features());
            for (c, &j) in self.columns.iter().zip(&sources) {
                let v = r[j].as_deref().unwrap();
                let unknown = || Error::Row {
                    row: i + 2,
                    message: format!("unknown category '{v}' in column '{}'", c.source()),
                };
                match c {
                    ColumnEncoding::Numeric { mean, scale, .. } => {
                        let x: f64 = v.parse().map_err(|_| Error::Row {
                            row: i + 2,
                            message: format!("'{v}' is not numeric in column '{}'", c.source()),
                        })?;
                        out.push((x - mean) / scale);
                    }
                    ColumnEncoding::OneHot { categories, .. } => {
                        let k = categories.iter().position(|s| s == v).ok_or_else(unknown)?;
                        out.extend((0..categories.len()).map(|m| f64::from(u8::from(m == k))));
                    }
                    ColumnEncoding::Label { categories, .. } => {
                        let k = categories.iter().position(|s| s == v).ok_or_else(unknown)?;
                        out.push(k as f64);
                    }
                }
            }
            rows.push(out);
            labels.push(u8::from(r[label_idx].as_deref() == Some(self.positive.as_str())));
            kept.push(i);
        }
        if rows.is_empty() {
            return Err(Error::Data("no rows left after dropping missing values".into()));
        }
        Ok((Dataset::new(self.schema()?, rows, Some(labels))?, kept))
    }

    /// Sets each numeric column's standardization from the given rows of an
    /// (unstandardized) encoding.
    fn fit_standardization(&mut self, encoded: &Dataset, rows: &[usize]) {
        let n = rows.len() as f64;
        let mut offset = 0;
        for c in self.columns.iter_mut() {
            if let ColumnEncoding::Numeric { mean, scale, .. } = c {
                let m = rows.iter().map(|&i| encoded.row(i)[offset]).sum::<f64>() / n;
                let var = rows
                    .iter()
                    .map(|&i| (encoded.row(i)[offset] - m).powi(2))
                    .sum::<f64>()
                    / n;
                *mean = m;
                *scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            }
            offset += c.width();
        }
    }
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of rows assigned to training.
    pub train_ratio: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

/// Seeded train/test index split. Stratified splits round each class's
/// training share separately. Both index lists are returned ascending.
pub fn split_indices(labels: &[u8], cfg: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(cfg.train_ratio > 0.0 && cfg.train_ratio < 1.0) {
        return Err(Error::config("train_ratio must lie in (0, 1)"));
    }
    let mut rng = rng_from(cfg.seed, &[label_tag("split")]);
    let groups: Vec<Vec<usize>> = if cfg.stratified {
        let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        if let Some((y, g)) = by_class.iter().find(|(_, g)| g.len() < 2) {
            return Err(Error::Data(format!(
                "class {y} has {} row(s); stratified splitting needs at least 2",
                g.len()
            )));
        }
        by_class.into_values().collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = (g.len() as f64 * cfg.train_ratio).round() as usize;
        let k = k.clamp(usize::from(cfg.stratified), g.len() - usize::from(cfg.stratified));
        train.extend_from_slice(&g[..k]);
        test.extend_from_slice(&g[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(data: &Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::invalid("splitting needs labels"))?;
    let (tr, te) = split_indices(labels, cfg)?;
    Ok((data.subset(&tr), data.subset(&te)))
}

/// Result of [`prepare`]: standardized train and test partitions plus the
/// manifest that reproduces them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: EncodingManifest,
    pub rows_loaded: usize,
    pub rows_dropped: usize,
}

/// Encode, split, then standardize numeric columns with statistics from the
/// training partition only.
pub fn prepare(raw: &RawTable, cfg: &DatasetConfig, split_cfg: &SplitConfig) -> Result<Prepared> {
    let mut manifest = EncodingManifest::infer(raw, cfg)?;
    let (encoded, kept) = manifest.apply(raw)?;
    let (tr, te) = split_indices(encoded.labels().expect("labelled"), split_cfg)?;
    manifest.fit_standardization(&encoded, &tr);
    let (data, _) = manifest.apply(raw)?;
    Ok(Prepared {
        train: data.subset(&tr),
        test: data.subset(&te),
        rows_loaded: raw.rows.len(),
        rows_dropped: raw.rows.len() - kept.len(),
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(csv: &str) -> Result<RawTable> {
        RawTable::from_reader(csv.as_bytes(), b',', &default_missing())
    }

    #[test]
    fn parses_and_marks_missing() {
        let t = raw("a,b,y\n1,x,0\n?,y,1\n3,NA,0\n4,,1\n").unwrap();
        assert_eq!(t.columns, vec!["a", "b", "y"]);
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[1][0], None);
        assert_eq!(t.rows[2][1], None);
        assert_eq!(t.rows[3][1], None);
        assert!(t.is_numeric(0));
        assert!(!t.is_numeric(1));
        assert_eq!(t.n_missing_rows(), 3);
    }

    #[test]
    fn ragged_row_reports_line() {
        match raw("a,b\n1,2\n3\n") {
            Err(Error::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn round_trips_a_clean_file() {
        let text = "a,b,y\n1.5,u,0\n2,v,1\n";
        let t = raw(text).unwrap();
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(&t.columns).unwrap();
        for r in &t.rows {
            out.write_record(r.iter().map(|c| c.clone().unwrap())).unwrap();
        }
        assert_eq!(String::from_utf8(out.into_inner().unwrap()).unwrap(), text);
    }

    fn categories_table(k: usize, rows: usize) -> RawTable {
        let mut s = String::from("c,n,y\n");
        for i in 0..rows {
            s.push_str(&format!("cat{},{},{}\n", i % k, i, i % 2));
        }
        raw(&s).unwrap()
    }

    #[test]
    fn small_cardinality_is_one_hot() {
        let m = EncodingManifest::infer(&categories_table(3, 30), &DatasetConfig::with_label("y")).unwrap();
        assert!(matches!(&m.columns[0], ColumnEncoding::OneHot { categories, .. } if categories.len() == 3));
        assert_eq!(m.n_features(), 4);
        assert_eq!(m.schema().unwrap().names()[0], "c=cat0");
    }

    #[test]
    fn large_cardinality_is_label_encoded() {
        let m = EncodingManifest::infer(&categories_table(40, 80), &DatasetConfig::with_label("y")).unwrap();
        assert!(matches!(&m.columns[0], ColumnEncoding::Label { categories, .. } if categories.len() == 40));
        assert_eq!(m.n_features(), 2);
    }

    #[test]
    fn missing_rows_are_dropped_and_counted() {
        let t = raw("a,y\n1,0\n2,1\n?,0\n4,1\n5,0\n6,1\n").unwrap();
        let p = prepare(&t, &DatasetConfig::with_label("y"), &SplitConfig::default()).unwrap();
        assert_eq!(p.rows_dropped, 1);
        assert_eq!(p.train.n_rows() + p.test.n_rows(), 5);
    }

    #[test]
    fn forced_categorical_and_positive_label() {
        let t = raw("code,v,y\n1,0.5,good\n2,0.1,bad\n1,0.3,good\n").unwrap();
        let mut cfg = DatasetConfig::with_label("y");
        cfg.categorical = vec!["code".into()];
        cfg.label.positive = Some("bad".into());
        let m = EncodingManifest::infer(&t, &cfg).unwrap();
        let (d, _) = m.apply(&t).unwrap();
        assert_eq!(d.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(d.schema().kinds()[0], FeatureKind::Categorical);
        assert_eq!(d.row(1), &[0.0, 1.0, 0.1]);
    }

    #[test]
    fn checksum_mismatch_is_a_data_error() {
        let t = categories_table(3, 30);
        let mut cfg = DatasetConfig::with_label("y");
        cfg.expected.numeric = Some(2);
        assert!(matches!(EncodingManifest::infer(&t, &cfg), Err(Error::Data(_))));
        cfg.expected = ExpectedCounts {
            rows: Some(30),
            categorical: Some(1),
            numeric: Some(1),
        };
        assert!(EncodingManifest::infer(&t, &cfg).is_ok());
    }

    #[test]
    fn training_partition_is_standardized_and_manifest_reproduces_it() {
        let mut s = String::from("a,b,c,y\n");
        for i in 0..200 {
            s.push_str(&format!("{},{},k{},{}\n", i * 3 % 17, (i as f64).sqrt(), i % 4, u8::from(i % 3 == 0)));
        }
        let t = raw(&s).unwrap();
        let p = prepare(&t, &DatasetConfig::with_label("y"), &SplitConfig::default()).unwrap();
        for j in 0..2 {
            let col = p.train.column(j);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
        let (again, _) = p.manifest.apply(&t).unwrap();
        let (tr, _) = split_indices(again.labels().unwrap(), &SplitConfig::default()).unwrap();
        assert_eq!(again.subset(&tr), p.train);
    }

    #[test]
    fn split_sizes_and_stratification() {
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 10 < 3)).collect();
        let (tr, te) = split_indices(&labels, &SplitConfig::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (800, 200));
        let pos_train = tr.iter().filter(|&&i| labels[i] == 1).count();
        assert!((pos_train as i64 - 240).abs() <= 1);
        let plain = SplitConfig {
            stratified: false,
            ..Default::default()
        };
        let (tr2, te2) = split_indices(&labels, &plain).unwrap();
        assert_eq!((tr2.len(), te2.len()), (800, 200));
        assert_eq!(split_indices(&labels, &plain).unwrap().0, tr2);
        assert!(split_indices(&[0, 0, 0, 1], &SplitConfig::default()).is_err());
    }
}
