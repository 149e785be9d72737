//! Correlation and nonparametric significance machinery.
//!
//! Correlations of a constant vector are defined as 0 throughout the crate.
//! Friedman uses the chi-square approximation; the post hoc comparison of one
//! method against each other method uses the usual rank-difference z statistic
//! `(R̄_a − R̄_b) / sqrt(k(k+1) / 6n)` followed by a Finner step-down
//! adjustment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Significance level used for both the Friedman gate and the post hoc test.
pub const ALPHA: f64 = 0.05;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "correlation inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("correlation needs at least two observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("correlation inputs must be finite"));
    }
    Ok(())
}

/// Pearson product-moment correlation; 0 when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ("fractional") ranks, smallest value gets rank 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi_square: f64,
    pub p_value: f64,
    /// Mean within-block rank per method (1 = smallest value).
    pub average_ranks: Vec<f64>,
    pub n_blocks: usize,
    pub k_methods: usize,
}

fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("degrees of freedom are positive");
    (1.0 - dist.cdf(x)).clamp(0.0, 1.0)
}

/// Friedman test over `blocks` (one row per block, one column per method).
///
/// Within each block the smallest value receives rank 1; ties share average
/// ranks. Pass per-block rank vectors directly when methods are already ranked.
pub fn friedman_test(blocks: &[Vec<f64>]) -> Result<FriedmanResult> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::invalid("Friedman test needs at least two blocks"));
    }
    let k = blocks[0].len();
    if k < 2 {
        return Err(Error::invalid("Friedman test needs at least two methods"));
    }
    if blocks.iter().any(|b| b.len() != k) {
        return Err(Error::invalid("Friedman blocks have unequal widths"));
    }
    if blocks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Friedman input must be finite"));
    }
    let mut sums = vec![0.0; k];
    for block in blocks {
        for (s, r) in sums.iter_mut().zip(average_ranks(block)) {
            *s += r;
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    let average_ranks: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let sum_sq: f64 = average_ranks.iter().map(|r| r * r).sum();
    let raw = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    // Exactly tied input lands within rounding of zero.
    let chi_square = if raw.abs() < 1e-12 { 0.0 } else { raw.max(0.0) };
    Ok(FriedmanResult {
        chi_square,
        p_value: chi_square_sf(chi_square, kf - 1.0),
        average_ranks,
        n_blocks: n,
        k_methods: k,
    })
}

/// Finner step-down adjustment. Returned values are aligned with the input.
pub fn finner_posthoc(p_values: &[f64]) -> Result<Vec<f64>> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len() as f64;
    let mut order: Vec<usize> = (0..p_values.len()).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; p_values.len()];
    let mut running = 0.0f64;
    for (pos, &i) in order.iter().enumerate() {
        let j = (pos + 1) as f64;
        let p = p_values[i];
        // Exponent 1 maps p to itself; skip the round trip through 1 - p.
        let a = if m == j { p } else { 1.0 - (1.0 - p).powf(m / j) };
        running = running.max(a.min(1.0));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Two-sided p-value for the difference of average Friedman ranks.
pub fn rank_difference_p_value(avg_a: f64, avg_b: f64, k: usize, n: usize) -> f64 {
    let kf = k as f64;
    let se = (kf * (kf + 1.0) / (6.0 * n as f64)).sqrt();
    let z = (avg_a - avg_b).abs() / se;
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}

/// Number of methods significantly worse than `method` on a blocks × methods
/// table where lower values are better (e.g. per-instance ranks).
///
/// Zero unless the Friedman test rejects at [`ALPHA`]; otherwise the count of
/// methods with a larger average rank whose Finner-adjusted p-value against
/// `method` is below [`ALPHA`].
pub fn count_significantly_worse(blocks: &[Vec<f64>], method: usize) -> Result<usize> {
    let fr = friedman_test(blocks)?;
    if method >= fr.k_methods {
        return Err(Error::invalid(format!("method index {method} out of range")));
    }
    if fr.p_value >= ALPHA {
        return Ok(0);
    }
    let others: Vec<usize> = (0..fr.k_methods).filter(|&j| j != method).collect();
    let raw: Vec<f64> = others
        .iter()
        .map(|&j| {
            rank_difference_p_value(
                fr.average_ranks[method],
                fr.average_ranks[j],
                fr.k_methods,
                fr.n_blocks,
            )
        })
        .collect();
    let adjusted = finner_posthoc(&raw)?;
    Ok(others
        .iter()
        .zip(adjusted)
        .filter(|(&j, p)| *p < ALPHA && fr.average_ranks[j] > fr.average_ranks[method])
        .count())
}
