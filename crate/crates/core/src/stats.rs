//! Scalar statistics shared by the evaluation engine, the metric suite, and
//! the integrator.
//!
//! Conventions are fixed once here so every caller agrees bit-for-bit:
//! sums run left to right, Pearson is `Σxʼyʼ / √(Σxʼ² · Σyʼ²)` on centered
//! values (the ddof cancels), and ranks are 1-based with ties averaged.

/// Arithmetic mean; NaN for an empty slice.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass variance with the given delta degrees of freedom.
/// NaN when `n <= ddof`.
pub(crate) fn variance(xs: &[f64], ddof: usize) -> f64 {
    let n = xs.len();
    if n <= ddof {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    ss / (n - ddof) as f64
}

/// Sample standard deviation (ddof = 1).
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    variance(xs, 1).sqrt()
}

/// Pearson correlation of two equal-length slices without NaNs.
///
/// Returns NaN when fewer than two points or when either side has zero
/// centered sum of squares.
pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut num = 0.0;
    let mut den_x = 0.0;
    let mut den_y = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        num += dx * dy;
        den_x += dx * dx;
        den_y += dy * dy;
    }
    if den_x <= 0.0 || den_y <= 0.0 {
        return f64::NAN;
    }
    num / (den_x * den_y).sqrt()
}

/// 1-based ranks with ties assigned their average rank.
/// Input must be NaN-free.
pub(crate) fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub(crate) fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

/// Logistic function 1 / (1 + e^{ -z }).
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
