//! Weighted fusion of component rankings into one aggregate ranking.
//!
//! All three aggregators consume only ranks:
//!
//! - **WSUM** sums weighted, min-max normalized `1 / rank²` scores.
//! - **Borda** sums weighted Borda points `d − rank`.
//! - **Condorcet** compares every pair of features by weighted majority and
//!   orders features by Copeland score (wins − losses). Remaining ties fall
//!   back to the weighted Borda total; features still tied share a rank.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{
    competition_ranks_desc, minmax_normalize, squared_inverse_scores, Ranking, Weights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Wsum,
    Borda,
    Condorcet,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wsum" => Ok(Self::Wsum),
            "borda" | "bordafuse" => Ok(Self::Borda),
            "condorcet" => Ok(Self::Condorcet),
            other => Err(Error::config(format!("unknown aggregator '{other}'"))),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Wsum => "wsum",
            Self::Borda => "borda",
            Self::Condorcet => "condorcet",
        })
    }
}

impl Aggregator {
    pub fn aggregate(&self, input: &AggregationInput) -> Result<Ranking> {
        match self {
            Self::Wsum => wsum_aggregate(input),
            Self::Borda => borda_aggregate(input),
            Self::Condorcet => condorcet_aggregate(input),
        }
    }
}

/// Rankings over a shared schema plus one weight per ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationInput {
    rankings: Vec<Ranking>,
    weights: Weights,
}

impl AggregationInput {
    pub fn new(rankings: Vec<Ranking>, weights: Weights) -> Result<Self> {
        let first = rankings
            .first()
            .ok_or_else(|| Error::invalid("aggregation needs at least one ranking"))?;
        for r in &rankings[1..] {
            first.schema().ensure_same(r.schema())?;
        }
        if weights.len() != rankings.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} rankings",
                weights.len(),
                rankings.len()
            )));
        }
        Ok(Self { rankings, weights })
    }

    pub fn rankings(&self) -> &[Ranking] {
        &self.rankings
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    fn d(&self) -> usize {
        self.rankings[0].len()
    }

    fn weighted(&self) -> impl Iterator<Item = (f64, &Ranking)> {
        self.weights.values().iter().copied().zip(&self.rankings)
    }

    fn finish(&self, keys: &[f64]) -> Result<Ranking> {
        Ranking::new(self.rankings[0].schema().clone(), competition_ranks_desc(keys))
    }
}

/// Per-feature weighted sum of min-max normalized squared-inverse-rank scores.
pub fn wsum_totals(input: &AggregationInput) -> Result<Vec<f64>> {
    let mut totals = vec![0.0; input.d()];
    for (w, r) in input.weighted() {
        let scores = minmax_normalize(&squared_inverse_scores(r))?;
        for (t, s) in totals.iter_mut().zip(scores) {
            *t += w * s;
        }
    }
    Ok(totals)
}

pub fn wsum_aggregate(input: &AggregationInput) -> Result<Ranking> {
    input.finish(&wsum_totals(input)?)
}

/// Per-feature weighted Borda points `Σ w_e · (d − rank_e)`.
pub fn borda_totals(input: &AggregationInput) -> Vec<f64> {
    let d = input.d();
    let mut totals = vec![0.0; d];
    for (w, r) in input.weighted() {
        for (t, &k) in totals.iter_mut().zip(r.ranks()) {
            *t += w * (d - k) as f64;
        }
    }
    totals
}

pub fn borda_aggregate(input: &AggregationInput) -> Result<Ranking> {
    input.finish(&borda_totals(input))
}

/// Weighted pairwise margins: `m[a][b] = Σ w_e · sign(rank_e(b) − rank_e(a))`.
/// Positive means `a` beats `b`.
pub fn pairwise_margins(input: &AggregationInput) -> Vec<Vec<f64>> {
    let d = input.d();
    let mut m = vec![vec![0.0; d]; d];
    for (w, r) in input.weighted() {
        let ranks = r.ranks();
        for a in 0..d {
            for b in 0..d {
                let s = match ranks[b].cmp(&ranks[a]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Less => -1.0,
                    std::cmp::Ordering::Equal => 0.0,
                };
                m[a][b] += w * s;
            }
        }
    }
    m
}

/// Copeland score per feature: pairwise wins minus losses.
pub fn copeland_scores(margins: &[Vec<f64>]) -> Vec<i64> {
    let d = margins.len();
    (0..d)
        .map(|a| {
            (0..d)
                .filter(|&b| b != a)
                .map(|b| {
                    let m = margins[a][b];
                    if m > 0.0 {
                        1
                    } else if m < 0.0 {
                        -1
                    } else {
                        0
                    }
                })
                .sum()
        })
        .collect()
}

pub fn condorcet_aggregate(input: &AggregationInput) -> Result<Ranking> {
    let copeland = copeland_scores(&pairwise_margins(input));
    let borda = borda_totals(input);
    let d = input.d();
    let mut order: Vec<usize> = (0..d).collect();
    let key = |i: usize| (copeland[i], borda[i]);
    order.sort_by(|&a, &b| {
        copeland[b]
            .cmp(&copeland[a])
            .then(borda[b].total_cmp(&borda[a]))
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; d];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && key(order[pos - 1]) == key(i) {
            ranks[order[pos - 1]]
        } else {
            pos + 1
        };
    }
    Ranking::new(input.rankings[0].schema().clone(), ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::FeatureSchema;

    fn r(ranks: &[usize]) -> Ranking {
        Ranking::new(FeatureSchema::anonymous(ranks.len()).unwrap(), ranks.to_vec()).unwrap()
    }

    fn input(rankings: &[&[usize]], weights: &[f64]) -> AggregationInput {
        AggregationInput::new(
            rankings.iter().map(|x| r(x)).collect(),
            Weights::new(weights.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn wsum_examples() {
        let same = input(&[&[2, 1, 3], &[2, 1, 3]], &[0.5, 0.5]);
        assert_eq!(wsum_aggregate(&same).unwrap().ranks(), &[2, 1, 3]);
        let dict = input(&[&[3, 1, 2], &[1, 2, 3], &[2, 3, 1]], &[1.0, 0.0, 0.0]);
        assert_eq!(wsum_aggregate(&dict).unwrap().ranks(), &[3, 1, 2]);
        let mixed = input(&[&[1, 2, 3], &[3, 2, 1]], &[0.7, 0.3]);
        let totals = wsum_totals(&mixed).unwrap();
        for (t, e) in totals.iter().zip([0.7, 0.15625, 0.3]) {
            assert!((t - e).abs() < 1e-12);
        }
        assert_eq!(wsum_aggregate(&mixed).unwrap().ranks(), &[1, 3, 2]);
    }

    #[test]
    fn borda_examples() {
        let same = input(&[&[1, 1, 3], &[1, 1, 3]], &[0.3, 0.7]);
        assert_eq!(borda_aggregate(&same).unwrap().ranks(), &[1, 1, 3]);
        let sym = input(&[&[1, 2], &[2, 1]], &[0.5, 0.5]);
        assert_eq!(borda_aggregate(&sym).unwrap().ranks(), &[1, 1]);
        let mixed = input(&[&[1, 2, 3], &[2, 1, 3]], &[0.6, 0.4]);
        let totals = borda_totals(&mixed);
        for (t, e) in totals.iter().zip([1.6, 1.4, 0.0]) {
            assert!((t - e).abs() < 1e-12);
        }
        assert_eq!(borda_aggregate(&mixed).unwrap().ranks(), &[1, 2, 3]);
    }

    #[test]
    fn condorcet_examples() {
        let same = input(&[&[3, 1, 2]], &[1.0]);
        assert_eq!(condorcet_aggregate(&same).unwrap().ranks(), &[3, 1, 2]);
        let dict = input(&[&[2, 1, 3], &[1, 2, 3]], &[1.0, 0.0]);
        assert_eq!(condorcet_aggregate(&dict).unwrap().ranks(), &[2, 1, 3]);
        // a>b>c, b>c>a, c>a>b
        let cycle = input(&[&[1, 2, 3], &[3, 1, 2], &[2, 3, 1]], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(copeland_scores(&pairwise_margins(&cycle)), vec![0, 0, 0]);
        assert_eq!(condorcet_aggregate(&cycle).unwrap().ranks(), &[1, 1, 1]);
    }

    #[test]
    fn condorcet_residual_ties_share_rank() {
        let profile = input(&[&[1, 2, 3], &[2, 1, 3]], &[0.5, 0.5]);
        assert_eq!(condorcet_aggregate(&profile).unwrap().ranks(), &[1, 1, 3]);
    }

    #[test]
    fn input_validation() {
        assert!(AggregationInput::new(vec![], Weights::uniform(1).unwrap()).is_err());
        let a = r(&[1, 2]);
        let b = Ranking::new(FeatureSchema::numeric(["x", "y"]).unwrap(), vec![1, 2]).unwrap();
        assert!(AggregationInput::new(vec![a.clone(), b], Weights::uniform(2).unwrap()).is_err());
        assert!(AggregationInput::new(vec![a], Weights::uniform(2).unwrap()).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("WSUM".parse::<Aggregator>().unwrap(), Aggregator::Wsum);
        assert!("kemeny".parse::<Aggregator>().is_err());
    }
}
