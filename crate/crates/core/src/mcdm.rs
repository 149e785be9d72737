//! Multi-criteria decision making: scores alternatives (explainers) on a
//! decision matrix of criteria (metrics) and turns the scores into weights.
//!
//! Two scorers are provided, TOPSIS and EDAS. Both return a score in `[0, 1]`
//! per alternative, higher is better. Other scorers can be plugged in through
//! [`McdmScorer`].

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::Weights;

/// Offset added after shifting a column with negative entries up to zero.
pub const TOPSIS_SHIFT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Higher is better.
    Benefit,
    /// Lower is better.
    Cost,
}

/// Alternatives × criteria performance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    values: Vec<Vec<f64>>,
    directions: Vec<Direction>,
    weights: Weights,
}

impl DecisionMatrix {
    pub fn new(values: Vec<Vec<f64>>, directions: Vec<Direction>, weights: Weights) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(Error::invalid("decision matrix needs at least two alternatives"));
        }
        let n = directions.len();
        if n == 0 {
            return Err(Error::invalid("decision matrix needs at least one criterion"));
        }
        if let Some(i) = values.iter().position(|row| row.len() != n) {
            return Err(Error::invalid(format!(
                "alternative {i} has {} values for {n} criteria",
                values[i].len()
            )));
        }
        if weights.len() != n {
            return Err(Error::invalid(format!(
                "{} criterion weights for {n} criteria",
                weights.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("decision matrix entries must be finite"));
        }
        Ok(Self {
            values,
            directions,
            weights,
        })
    }

    /// Equal criterion weights.
    pub fn with_equal_weights(values: Vec<Vec<f64>>, directions: Vec<Direction>) -> Result<Self> {
        let w = Weights::uniform(directions.len())?;
        Self::new(values, directions, w)
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn n_alternatives(&self) -> usize {
        self.values.len()
    }

    pub fn n_criteria(&self) -> usize {
        self.directions.len()
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |row| row[j])
    }

    /// Reads a CSV whose rows are alternatives. The header names criteria; a
    /// non-numeric first column is taken as the alternative label.
    pub fn from_csv<R: Read>(reader: R, sidecar: &MatrixSidecar) -> Result<(Vec<String>, Self)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut fields = rec.iter().map(str::trim).peekable();
            let label = match fields.peek() {
                Some(first) if first.parse::<f64>().is_err() => fields.next().unwrap().to_string(),
                _ => format!("alt{i}"),
            };
            let row = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Row {
                        row: i + 2,
                        message: format!("'{f}' is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            labels.push(label);
            values.push(row);
        }
        let weights = match &sidecar.weights {
            Some(w) => Weights::new(w.clone())?,
            None => Weights::uniform(sidecar.directions.len())?,
        };
        Ok((labels, Self::new(values, sidecar.directions.clone(), weights)?))
    }
}

/// JSON companion of a CSV decision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub directions: Vec<Direction>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McdmMethod {
    Topsis,
    Edas,
}

impl std::str::FromStr for McdmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "topsis" => Ok(Self::Topsis),
            "edas" => Ok(Self::Edas),
            other => Err(Error::config(format!("unknown MCDM method '{other}'"))),
        }
    }
}

impl std::fmt::Display for McdmMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Topsis => "topsis",
            Self::Edas => "edas",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdmResult {
    pub method: McdmMethod,
    /// One score per alternative in `[0, 1]`, higher is better.
    pub scores: Vec<f64>,
    /// Degenerate-case conventions that fired, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Matrix in, per-alternative scores out.
pub trait McdmScorer {
    fn score(&self, dm: &DecisionMatrix) -> Result<McdmResult>;
}

impl McdmScorer for McdmMethod {
    fn score(&self, dm: &DecisionMatrix) -> Result<McdmResult> {
        Ok(match self {
            Self::Topsis => topsis(dm),
            Self::Edas => edas(dm),
        })
    }
}

/// TOPSIS relative closeness to the positive ideal solution.
///
/// Columns holding negative values are first shifted to start at
/// [`TOPSIS_SHIFT_EPSILON`]; vector normalization assumes nonnegative data.
pub fn topsis(dm: &DecisionMatrix) -> McdmResult {
    let m = dm.n_alternatives();
    let n = dm.n_criteria();
    let mut notes = Vec::new();

    let mut weighted = vec![vec![0.0; n]; m];
    for j in 0..n {
        let min = dm.column(j).fold(f64::INFINITY, f64::min);
        let shift = if min < 0.0 {
            notes.push(format!("criterion {j}: shifted by {} to remove negatives", TOPSIS_SHIFT_EPSILON - min));
            TOPSIS_SHIFT_EPSILON - min
        } else {
            0.0
        };
        let norm = dm.column(j).map(|x| (x + shift).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            notes.push(format!("criterion {j}: all-zero column left at 0"));
            continue;
        }
        let w = dm.weights.values()[j];
        for (i, row) in dm.values.iter().enumerate() {
            weighted[i][j] = w * (row[j] + shift) / norm;
        }
    }

    let mut ideal = vec![0.0; n];
    let mut anti = vec![0.0; n];
    for j in 0..n {
        let (lo, hi) = weighted
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
        (ideal[j], anti[j]) = match dm.directions[j] {
            Direction::Benefit => (hi, lo),
            Direction::Cost => (lo, hi),
        };
    }

    let dist = |row: &[f64], target: &[f64]| -> f64 {
        row.iter().zip(target).map(|(v, t)| (v - t).powi(2)).sum::<f64>().sqrt()
    };
    let mut degenerate = false;
    let scores = weighted
        .iter()
        .map(|row| {
            let s_pos = dist(row, &ideal);
            let s_neg = dist(row, &anti);
            if s_pos + s_neg == 0.0 {
                degenerate = true;
                0.5
            } else {
                (s_neg / (s_pos + s_neg)).clamp(0.0, 1.0)
            }
        })
        .collect();
    if degenerate {
        notes.push("zero total separation; closeness set to 0.5".into());
    }
    McdmResult {
        method: McdmMethod::Topsis,
        scores,
        notes,
    }
}

/// EDAS appraisal scores from distances to the average solution.
pub fn edas(dm: &DecisionMatrix) -> McdmResult {
    let m = dm.n_alternatives();
    let n = dm.n_criteria();
    let mut notes = Vec::new();
    let avg: Vec<f64> = (0..n).map(|j| dm.column(j).sum::<f64>() / m as f64).collect();

    let mut sp = vec![0.0; m];
    let mut sn = vec![0.0; m];
    for (i, row) in dm.values.iter().enumerate() {
        for j in 0..n {
            let above = row[j] - avg[j];
            let (pda, nda) = match dm.directions[j] {
                Direction::Benefit => (above.max(0.0), (-above).max(0.0)),
                Direction::Cost => ((-above).max(0.0), above.max(0.0)),
            };
            let w = dm.weights.values()[j];
            sp[i] += w * pda;
            sn[i] += w * nda;
        }
    }
    let max_sp = sp.iter().copied().fold(0.0, f64::max);
    let max_sn = sn.iter().copied().fold(0.0, f64::max);
    if max_sp == 0.0 && max_sn == 0.0 {
        notes.push("no distance from average; appraisal set to 0.5".into());
        return McdmResult {
            method: McdmMethod::Edas,
            scores: vec![0.5; m],
            notes,
        };
    }
    if max_sp == 0.0 {
        notes.push("max positive distance is 0; NSP set to 0".into());
    }
    if max_sn == 0.0 {
        notes.push("max negative distance is 0; NSN set to 1".into());
    }
    let scores = (0..m)
        .map(|i| {
            let nsp = if max_sp > 0.0 { sp[i] / max_sp } else { 0.0 };
            let nsn = if max_sn > 0.0 { 1.0 - sn[i] / max_sn } else { 1.0 };
            ((nsp + nsn) / 2.0).clamp(0.0, 1.0)
        })
        .collect();
    McdmResult {
        method: McdmMethod::Edas,
        scores,
        notes,
    }
}

/// Normalizes nonnegative scores into weights; an all-zero vector becomes uniform.
pub fn scores_to_weights(res: &McdmResult) -> Result<Weights> {
    if res.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid("MCDM scores must be finite and nonnegative"));
    }
    if res.scores.iter().sum::<f64>() == 0.0 {
        log::info!("all MCDM scores are zero; using uniform weights");
    }
    Weights::normalized(&res.scores)
}
