//! Encoded numeric tabular data with an optional binary label column.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::importance::{FeatureKind, FeatureSchema};

/// Row-major feature matrix plus schema. All cells are finite; categorical
/// features are already encoded as numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> Result<Self> {
        let d = schema.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Row {
                    row: i,
                    message: format!("{} values for {} features", r.len(), d),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i,
                    message: "non-finite value".into(),
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.len()
                )));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(Self {
            schema,
            rows,
            labels,
        })
    }

    /// Unlabelled numeric dataset with anonymous feature names.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("dataset has no rows"))?;
        Self::new(FeatureSchema::anonymous(d)?, rows, None)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Same schema and labels, different cell values.
    pub fn with_rows(&self, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != self.rows.len() {
            return Err(Error::invalid("replacement rows change the dataset length"));
        }
        Self::new(self.schema.clone(), rows, self.labels.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// SHA-256 over the row-major little-endian `f64` bytes of the matrix.
    pub fn content_hash(&self) -> String {
        matrix_hash(&self.rows)
    }

    pub fn is_categorical(&self, j: usize) -> bool {
        self.schema.kind(j) == FeatureKind::Categorical
    }
}

/// SHA-256 (hex) over the row-major little-endian `f64` bytes of `rows`.
pub fn matrix_hash(rows: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        for v in r {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Stable hash of a schema's names and kinds.
pub fn schema_hash(schema: &FeatureSchema) -> String {
    let mut h = Sha256::new();
    for (n, k) in schema.names().iter().zip(schema.kinds()) {
        h.update(n.as_bytes());
        h.update([0u8, matches!(k, FeatureKind::Categorical) as u8, 0xff]);
    }
    hex::encode(h.finalize())
}
