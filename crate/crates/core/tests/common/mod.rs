//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library; each function is a direct transcription of the
//! textbook formula.

#![allow(dead_code)]

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Average ranks, 1 = smallest, by counting (O(n²)).
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let below = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// Min-competition ranks of descending `|score|`: 1 + number of strictly
/// larger magnitudes.
pub fn competition_ranks(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|s| 1 + scores.iter().filter(|t| t.abs() > s.abs()).count())
        .collect()
}

/// `(Σ 1/R_i) · ln(d+1) · (1 + α·σ(R))`, population σ.
pub fn nrc(ranks: &[usize], alpha: f64) -> f64 {
    let d = ranks.len() as f64;
    let r: Vec<f64> = ranks.iter().map(|&k| k as f64).collect();
    let mu = r.iter().sum::<f64>() / d;
    let sigma = (r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d).sqrt();
    r.iter().map(|x| 1.0 / x).sum::<f64>() * (d + 1.0).ln() * (1.0 + alpha * sigma)
}

/// TOPSIS closeness, step by step. `benefit[j]` is false for cost criteria.
/// Columns with negative entries are first shifted to start at `shift_eps`.
pub fn topsis(x: &[Vec<f64>], w: &[f64], benefit: &[bool], shift_eps: f64) -> Vec<f64> {
    let m = x.len();
    let n = w.len();
    // Step 1: decision matrix, shifted to nonnegative.
    let mut a = x.to_vec();
    for j in 0..n {
        let lo = (0..m).map(|i| a[i][j]).fold(f64::INFINITY, f64::min);
        if lo < 0.0 {
            for row in a.iter_mut() {
                row[j] = row[j] - lo + shift_eps;
            }
        }
    }
    // Step 2: vector normalization.
    let mut r = vec![vec![0.0; n]; m];
    for j in 0..n {
        let denom = (0..m).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        for i in 0..m {
            r[i][j] = if denom == 0.0 { 0.0 } else { a[i][j] / denom };
        }
    }
    // Step 3: weighting.
    let v: Vec<Vec<f64>> = r.iter().map(|row| row.iter().zip(w).map(|(a, b)| a * b).collect()).collect();
    // Step 4: ideal and anti-ideal.
    let mut pis = vec![0.0; n];
    let mut nis = vec![0.0; n];
    for j in 0..n {
        let col: Vec<f64> = v.iter().map(|row| row[j]).collect();
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        if benefit[j] {
            pis[j] = hi;
            nis[j] = lo;
        } else {
            pis[j] = lo;
            nis[j] = hi;
        }
    }
    // Steps 5-6: separations and closeness.
    v.iter()
        .map(|row| {
            let sp = row.iter().zip(&pis).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let sn = row.iter().zip(&nis).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if sp + sn == 0.0 {
                0.5
            } else {
                sn / (sp + sn)
            }
        })
        .collect()
}

/// EDAS appraisal scores, step by step.
pub fn edas(x: &[Vec<f64>], w: &[f64], benefit: &[bool]) -> Vec<f64> {
    let m = x.len();
    let n = w.len();
    // Step 2: average solution.
    let av: Vec<f64> = (0..n).map(|j| (0..m).map(|i| x[i][j]).sum::<f64>() / m as f64).collect();
    // Steps 3-4: distances and their weighted sums.
    let mut sp = vec![0.0; m];
    let mut sn = vec![0.0; m];
    for i in 0..m {
        for j in 0..n {
            let (pda, nda) = if benefit[j] {
                ((x[i][j] - av[j]).max(0.0), (av[j] - x[i][j]).max(0.0))
            } else {
                ((av[j] - x[i][j]).max(0.0), (x[i][j] - av[j]).max(0.0))
            };
            sp[i] += w[j] * pda;
            sn[i] += w[j] * nda;
        }
    }
    // Step 5: normalization; Step 6: appraisal.
    let msp = sp.iter().cloned().fold(0.0, f64::max);
    let msn = sn.iter().cloned().fold(0.0, f64::max);
    (0..m)
        .map(|i| {
            if msp == 0.0 && msn == 0.0 {
                return 0.5;
            }
            let nsp = if msp == 0.0 { 0.0 } else { sp[i] / msp };
            let nsn = if msn == 0.0 { 1.0 } else { 1.0 - sn[i] / msn };
            (nsp + nsn) / 2.0
        })
        .collect()
}

/// Weighted sum of min-max normalized `1/R²` scores.
pub fn wsum_totals(rankings: &[Vec<usize>], w: &[f64]) -> Vec<f64> {
    let d = rankings[0].len();
    let mut t = vec![0.0; d];
    for (r, wi) in rankings.iter().zip(w) {
        let s: Vec<f64> = r.iter().map(|&k| 1.0 / (k * k) as f64).collect();
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (tj, sj) in t.iter_mut().zip(&s) {
            *tj += wi * if hi > lo { (sj - lo) / (hi - lo) } else { 0.0 };
        }
    }
    t
}

/// Min-competition ranks of descending keys.
pub fn ranks_of_keys(keys: &[f64]) -> Vec<usize> {
    keys.iter()
        .map(|k| 1 + keys.iter().filter(|&&o| o > *k).count())
        .collect()
}

/// Friedman chi-square from a blocks × methods table (ranked within blocks,
/// smallest = 1, average ties).
pub fn friedman_chi2(blocks: &[Vec<f64>]) -> f64 {
    let n = blocks.len() as f64;
    let k = blocks[0].len();
    let mut rsum = vec![0.0; k];
    for b in blocks {
        for (s, r) in rsum.iter_mut().zip(fractional_ranks(b)) {
            *s += r;
        }
    }
    let kf = k as f64;
    12.0 / (n * kf * (kf + 1.0)) * rsum.iter().map(|r| r * r).sum::<f64>() - 3.0 * n * (kf + 1.0)
}

/// Finner step-down adjusted p-values, aligned with the input.
pub fn finner(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (pos, &i) in idx.iter().enumerate() {
        let j = (pos + 1) as f64;
        let adj = 1.0 - (1.0 - p[i]).powf(m as f64 / j);
        running = running.max(adj);
        out[i] = running.min(1.0);
    }
    out
}
