//! Straightforward numeric references: no partitioning, no compensation.

use nalgebra::{DMatrix, DVector};

/// Mean and population standard deviation via the textbook one-pass sums.
/// Adequate for the moderate magnitudes used in tests.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let s: f64 = xs.iter().sum();
    let s2: f64 = xs.iter().map(|x| x * x).sum();
    let mean = s / n;
    Some((mean, (s2 / n - mean * mean).max(0.0).sqrt()))
}

/// Ordinary least squares with intercept, solved from the raw (uncentred) normal
/// equations by LU decomposition. Returns `[intercept, w1, .., wk]`.
pub fn ols(xs: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let k = xs.first().map_or(0, Vec::len);
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
    let target = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * target;
    xtx.lu().solve(&xty).map(|b| b.iter().copied().collect())
}

pub fn r_squared(xs: &[Vec<f64>], y: &[f64], beta: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (row, yi) in xs.iter().zip(y) {
        let pred = beta[0] + row.iter().zip(&beta[1..]).map(|(x, w)| x * w).sum::<f64>();
        sse += (yi - pred).powi(2);
        sst += (yi - mean).powi(2);
    }
    (sst > 0.0).then(|| 1.0 - sse / sst)
}

/// Sum of squared residuals for given coefficients.
pub fn sse(xs: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    xs.iter()
        .zip(y)
        .map(|(row, yi)| {
            let pred = beta[0] + row.iter().zip(&beta[1..]).map(|(x, w)| x * w).sum::<f64>();
            (yi - pred).powi(2)
        })
        .sum()
}

/// Central finite-difference gradient of `sse` with respect to the coefficients.
pub fn sse_gradient(xs: &[Vec<f64>], y: &[f64], beta: &[f64], h: f64) -> Vec<f64> {
    (0..beta.len())
        .map(|j| {
            let mut up = beta.to_vec();
            let mut down = beta.to_vec();
            up[j] += h;
            down[j] -= h;
            (sse(xs, y, &up) - sse(xs, y, &down)) / (2.0 * h)
        })
        .collect()
}

/// Pearson correlation from the raw-sum formula.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let num = n * sab - sa * sb;
    let den = ((n * saa - sa * sa) * (n * sbb - sb * sb)).sqrt();
    (den > 0.0).then(|| num / den)
}

/// Counts per bin for `bins` equal-width bins over [min, max]; the maximum falls in the last bin.
pub fn histogram_counts(xs: &[f64], bins: usize) -> Vec<usize> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    for x in xs {
        let mut b = 0;
        // linear scan over bin upper edges
        while b + 1 < bins && *x >= lo + (hi - lo) * (b + 1) as f64 / bins as f64 {
            b += 1;
        }
        counts[b] += 1;
    }
    counts
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate() {
        if sq_dist(point, c) < sq_dist(point, &centroids[best]) {
            best = j;
        }
    }
    best
}

/// Mean of the points carrying each label; `None` for empty clusters.
pub fn cluster_means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, l) in points.iter().zip(labels) {
        counts[*l] += 1;
        for (s, x) in sums[*l].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

/// Gradient of the mean squared error, `(2/n) Xᵀ(Xβ − y)`, with the intercept column first.
pub fn mse_gradient(xs: &[Vec<f64>], y: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mut g = vec![0.0; beta.len()];
    for (row, yi) in xs.iter().zip(y) {
        let r = beta[0] + row.iter().zip(&beta[1..]).map(|(x, w)| x * w).sum::<f64>() - yi;
        g[0] += 2.0 * r / n;
        for (gj, x) in g[1..].iter_mut().zip(row) {
            *gj += 2.0 * r * x / n;
        }
    }
    g
}
