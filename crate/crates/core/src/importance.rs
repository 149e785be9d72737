//! Feature-importance and ranking primitives.
//!
//! An [`Explanation`] carries one signed score per feature. Importance is the
//! absolute value of the score; [`rank_features`] orders features by it with
//! min-competition ties ("1224"), which is the only tie mode a [`Ranking`]
//! can hold.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// A column produced by one-hot or label encoding of a categorical.
    Categorical,
}

/// Ordered, uniquely named feature set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr")]
pub struct FeatureSchema {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
}

#[derive(Deserialize)]
struct SchemaRepr {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
}

impl TryFrom<SchemaRepr> for FeatureSchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        Self::new(r.names, r.kinds)
    }
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("schema needs at least one feature"));
        }
        if names.len() != kinds.len() {
            return Err(Error::invalid(format!(
                "schema has {} names but {} kinds",
                names.len(),
                kinds.len()
            )));
        }
        let mut seen = HashSet::with_capacity(names.len());
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name '{n}'")));
            }
        }
        Ok(Self { names, kinds })
    }

    /// All-numeric schema.
    pub fn numeric<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let kinds = vec![FeatureKind::Numeric; names.len()];
        Self::new(names, kinds)
    }

    /// Numeric schema named `f0..f{d-1}`.
    pub fn anonymous(d: usize) -> Result<Self> {
        Self::numeric((0..d).map(|i| format!("f{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.kinds[i]
    }

    /// Returns a copy whose features are reordered by `perm` (new i = old perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            names: perm.iter().map(|&p| self.names[p].clone()).collect(),
            kinds: perm.iter().map(|&p| self.kinds[p]).collect(),
        }
    }

    pub(crate) fn ensure_same(&self, other: &FeatureSchema) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid("feature schemas differ"));
        }
        Ok(())
    }
}

/// Signed per-feature importance produced by one explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExplanationRepr", into = "ExplanationRepr")]
pub struct Explanation {
    schema: FeatureSchema,
    scores: Vec<f64>,
    source: String,
}

impl Explanation {
    pub fn new(schema: FeatureSchema, scores: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if scores.len() != schema.len() {
            return Err(Error::invalid(format!(
                "explanation has {} scores for {} features",
                scores.len(),
                schema.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "score for feature '{}' is not finite",
                schema.names()[i]
            )));
        }
        Ok(Self {
            schema,
            scores,
            source: source.into(),
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.abs()).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct ExplanationRepr {
    features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kinds: Option<Vec<FeatureKind>>,
    scores: Vec<f64>,
    #[serde(default)]
    source: String,
}

impl TryFrom<ExplanationRepr> for Explanation {
    type Error = Error;

    fn try_from(r: ExplanationRepr) -> Result<Self> {
        let kinds = r
            .kinds
            .unwrap_or_else(|| vec![FeatureKind::Numeric; r.features.len()]);
        Explanation::new(FeatureSchema::new(r.features, kinds)?, r.scores, r.source)
    }
}

impl From<Explanation> for ExplanationRepr {
    fn from(e: Explanation) -> Self {
        ExplanationRepr {
            features: e.schema.names,
            kinds: Some(e.schema.kinds),
            scores: e.scores,
            source: e.source,
        }
    }
}

/// Min-competition ranking of features, rank 1 = most important.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RankingRepr", into = "RankingRepr")]
pub struct Ranking {
    schema: FeatureSchema,
    ranks: Vec<usize>,
}

impl Ranking {
    /// Validates that `ranks` has the min-competition shape: every present
    /// rank `r` has exactly `r - 1` features ranked strictly ahead of it.
    pub fn new(schema: FeatureSchema, ranks: Vec<usize>) -> Result<Self> {
        if ranks.len() != schema.len() {
            return Err(Error::invalid(format!(
                "ranking has {} ranks for {} features",
                ranks.len(),
                schema.len()
            )));
        }
        let d = ranks.len();
        let mut counts = vec![0usize; d + 2];
        for &r in &ranks {
            if r == 0 || r > d {
                return Err(Error::invalid(format!("rank {r} outside 1..={d}")));
            }
            counts[r] += 1;
        }
        let mut ahead = 0;
        for (r, &c) in counts.iter().enumerate().skip(1) {
            if c > 0 && ahead != r - 1 {
                return Err(Error::invalid(format!(
                    "rank {r} is preceded by {ahead} features; not a competition ranking"
                )));
            }
            ahead += c;
        }
        Ok(Self { schema, ranks })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn is_tie_free(&self) -> bool {
        let mut seen = vec![false; self.ranks.len() + 1];
        self.ranks.iter().all(|&r| !std::mem::replace(&mut seen[r], true))
    }

    /// Ranks as reals, convenient for correlation code.
    pub fn ranks_f64(&self) -> Vec<f64> {
        self.ranks.iter().map(|&r| r as f64).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RankingRepr {
    features: Vec<String>,
    ranks: Vec<usize>,
}

impl TryFrom<RankingRepr> for Ranking {
    type Error = Error;

    fn try_from(r: RankingRepr) -> Result<Self> {
        Ranking::new(FeatureSchema::numeric(r.features)?, r.ranks)
    }
}

impl From<Ranking> for RankingRepr {
    fn from(r: Ranking) -> Self {
        RankingRepr {
            features: r.schema.names,
            ranks: r.ranks,
        }
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("weights must not be empty"));
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("weights must not be empty"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Rescales nonnegative values to sum to one; an all-zero input becomes uniform.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Self::uniform(values.len());
        }
        Ok(Self(values.iter().map(|w| w / sum).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Weights::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Min-competition ranks of `keys`, largest key first.
///
/// Equal keys share the smallest rank of their block. Keys must be finite.
pub(crate) fn competition_ranks_desc(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && keys[order[pos - 1]] == keys[i] {
            ranks[order[pos - 1]]
        } else {
            pos + 1
        };
    }
    ranks
}

/// Ranks features by descending |score|.
pub fn rank_features(expl: &Explanation) -> Result<Ranking> {
    if let Some(i) = expl.scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score at feature {i}")));
    }
    let ranks = competition_ranks_desc(&expl.magnitudes());
    Ranking::new(expl.schema.clone(), ranks)
}

/// `1 / rank²` for every feature.
pub fn squared_inverse_scores(r: &Ranking) -> Vec<f64> {
    r.ranks
        .iter()
        .map(|&k| {
            let k = k as f64;
            1.0 / (k * k)
        })
        .collect()
}

/// Maps scores linearly onto `[0, 1]`. A constant vector maps to all zeros.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("cannot normalize non-finite scores"));
    }
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|s| (s - lo) / range).collect())
}
