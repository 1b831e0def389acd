//! Per-asset rolling kernels.
//!
//! Each kernel walks one column of the panel. Windowed statistics cover the
//! most recent `d` rows including today and emit NaN unless all `d`
//! observations are valid; NaN windows are detected in O(1) through a prefix
//! count. Min/max families run on monotonic deques; the remaining statistics
//! recompute on the window slice so that evaluating a truncated panel matches
//! the tail of the full evaluation exactly.

use std::collections::VecDeque;

use crate::expr::{RollingBinOp, RollingOp};
use crate::stats;

use super::{clean, guard_denominator, EvalOptions};

fn nan_prefix(col: &[f64]) -> Vec<usize> {
    let mut p = Vec::with_capacity(col.len() + 1);
    p.push(0);
    for v in col {
        p.push(p.last().unwrap() + usize::from(v.is_nan()));
    }
    p
}

#[inline]
fn window_full(prefix: &[usize], t: usize, d: usize) -> bool {
    t + 1 >= d && prefix[t + 1] - prefix[t + 1 - d] == 0
}

pub(crate) fn roll_column(op: RollingOp, col: &[f64], d: usize, opts: &EvalOptions) -> Vec<f64> {
    use RollingOp::*;
    match op {
        Ref => lag_map(col, d, |_, past| past),
        TsDelta => lag_map(col, d, |now, past| clean(now - past)),
        TsRatio => lag_map(col, d, |now, past| {
            clean(now / guard_denominator(past, opts.eps))
        }),
        TsPctChange => lag_map(col, d, |now, past| {
            clean(now / guard_denominator(past, opts.eps) - 1.0)
        }),
        TsEMA => ema(col, d),
        TsMin => extrema(col, d, Extremum::Min),
        TsMax => extrema(col, d, Extremum::Max),
        TsMinMaxDiff | TsMaxDiff | TsMinDiff => extrema_diff(col, d, op),
        _ => windowed(col, d, |w| window_stat(op, w, opts)),
    }
}

/// Point-lag operators: output depends only on today's value and the value
/// `d` rows back, so intermediate NaNs do not matter.
fn lag_map(col: &[f64], d: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = col.len();
    let mut out = vec![f64::NAN; n];
    for t in d..n {
        let (now, past) = (col[t], col[t - d]);
        if now.is_nan() || past.is_nan() {
            continue;
        }
        out[t] = f(now, past);
    }
    out
}

fn ema(col: &[f64], d: usize) -> Vec<f64> {
    let alpha = 2.0 / (d as f64 + 1.0);
    let mut out = vec![f64::NAN; col.len()];
    let mut state: Option<f64> = None;
    for (t, &v) in col.iter().enumerate() {
        match (state, v.is_nan()) {
            (None, true) => {}
            (None, false) => state = Some(v),
            (Some(_), true) => {} // carry the previous value across the gap
            (Some(prev), false) => state = Some(clean(alpha * v + (1.0 - alpha) * prev)),
        }
        if let Some(s) = state {
            out[t] = s;
        }
    }
    out
}

fn windowed(col: &[f64], d: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let n = col.len();
    let prefix = nan_prefix(col);
    let mut out = vec![f64::NAN; n];
    if d > n {
        return out;
    }
    for t in d - 1..n {
        if window_full(&prefix, t, d) {
            out[t] = f(&col[t + 1 - d..=t]);
        }
    }
    out
}

fn window_stat(op: RollingOp, w: &[f64], opts: &EvalOptions) -> f64 {
    use RollingOp::*;
    let d = w.len();
    match op {
        TsMean => clean(stats::mean(w)),
        TsSum => clean(w.iter().sum()),
        TsStd => clean(stats::variance(w, opts.ddof).sqrt()),
        TsVar => clean(stats::variance(w, opts.ddof)),
        TsMed => clean(median(&mut w.to_vec())),
        TsMad => {
            let mut buf = w.to_vec();
            let med = median(&mut buf);
            let mut dev: Vec<f64> = w.iter().map(|x| (x - med).abs()).collect();
            clean(median(&mut dev))
        }
        TsIr => clean(stats::mean(w) / stats::variance(w, opts.ddof).sqrt()),
        TsSkew => skewness(w),
        TsKurt => excess_kurtosis(w),
        TsRank => rank_of_last(w),
        TsWMA => {
            // linearly decaying weights, newest = d, oldest = 1
            let total = (d * (d + 1) / 2) as f64;
            let acc: f64 = w
                .iter()
                .enumerate()
                .map(|(j, x)| (j + 1) as f64 * x)
                .sum();
            clean(acc / total)
        }
        _ => unreachable!("op {op:?} has a dedicated kernel"),
    }
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        (buf[n / 2 - 1] + buf[n / 2]) / 2.0
    }
}

/// Adjusted Fisher–Pearson sample skewness; NaN for n < 3 or zero variance.
fn skewness(w: &[f64]) -> f64 {
    let n = w.len();
    if n < 3 {
        return f64::NAN;
    }
    let m = stats::mean(w);
    let nf = n as f64;
    let m2: f64 = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf;
    let m3: f64 = w.iter().map(|x| (x - m).powi(3)).sum::<f64>() / nf;
    if m2 <= 0.0 {
        return f64::NAN;
    }
    let g1 = m3 / m2.powf(1.5);
    clean((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
}

/// Sample excess kurtosis; NaN for n < 4 or zero variance.
fn excess_kurtosis(w: &[f64]) -> f64 {
    let n = w.len();
    if n < 4 {
        return f64::NAN;
    }
    let m = stats::mean(w);
    let nf = n as f64;
    let m2: f64 = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf;
    let m4: f64 = w.iter().map(|x| (x - m).powi(4)).sum::<f64>() / nf;
    if m2 <= 0.0 {
        return f64::NAN;
    }
    let g2 = m4 / (m2 * m2) - 3.0;
    clean((nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0))
}

/// Average-tie rank of today's value within the window, mapped to [0, 1].
fn rank_of_last(w: &[f64]) -> f64 {
    let d = w.len();
    if d == 1 {
        return 0.5;
    }
    let last = w[d - 1];
    let mut less = 0usize;
    let mut equal = 0usize;
    for &x in w {
        if x < last {
            less += 1;
        } else if x == last {
            equal += 1;
        }
    }
    let rank = less as f64 + (equal as f64 + 1.0) / 2.0;
    (rank - 1.0) / (d as f64 - 1.0)
}

enum Extremum {
    Min,
    Max,
}

/// Monotonic-deque rolling min/max. NaN values are never pushed; full-window
/// validity is still enforced through the prefix count.
fn extrema(col: &[f64], d: usize, which: Extremum) -> Vec<f64> {
    let n = col.len();
    let prefix = nan_prefix(col);
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut out = vec![f64::NAN; n];
    for t in 0..n {
        while deque.front().is_some_and(|&i| i + d <= t) {
            deque.pop_front();
        }
        if !col[t].is_nan() {
            let dominated = |i: usize| match which {
                Extremum::Min => col[i] >= col[t],
                Extremum::Max => col[i] <= col[t],
            };
            while deque.back().is_some_and(|&i| dominated(i)) {
                deque.pop_back();
            }
            deque.push_back(t);
        }
        if window_full(&prefix, t, d) {
            out[t] = col[*deque.front().expect("full window has candidates")];
        }
    }
    out
}

fn extrema_diff(col: &[f64], d: usize, op: RollingOp) -> Vec<f64> {
    let n = col.len();
    let prefix = nan_prefix(col);
    let mut min_dq: VecDeque<usize> = VecDeque::new();
    let mut max_dq: VecDeque<usize> = VecDeque::new();
    let mut out = vec![f64::NAN; n];
    for t in 0..n {
        for dq in [&mut min_dq, &mut max_dq] {
            while dq.front().is_some_and(|&i| i + d <= t) {
                dq.pop_front();
            }
        }
        if !col[t].is_nan() {
            while min_dq.back().is_some_and(|&i| col[i] >= col[t]) {
                min_dq.pop_back();
            }
            min_dq.push_back(t);
            while max_dq.back().is_some_and(|&i| col[i] <= col[t]) {
                max_dq.pop_back();
            }
            max_dq.push_back(t);
        }
        if window_full(&prefix, t, d) {
            let lo = col[*min_dq.front().unwrap()];
            let hi = col[*max_dq.front().unwrap()];
            out[t] = clean(match op {
                RollingOp::TsMinMaxDiff => hi - lo,
                RollingOp::TsMaxDiff => col[t] - hi,
                RollingOp::TsMinDiff => col[t] - lo,
                _ => unreachable!(),
            });
        }
    }
    out
}

pub(crate) fn roll2_column(
    op: RollingBinOp,
    x: &[f64],
    y: &[f64],
    d: usize,
    opts: &EvalOptions,
) -> Vec<f64> {
    let n = x.len();
    let px = nan_prefix(x);
    let py = nan_prefix(y);
    let mut out = vec![f64::NAN; n];
    if d > n {
        return out;
    }
    for t in d - 1..n {
        if !(window_full(&px, t, d) && window_full(&py, t, d)) {
            continue;
        }
        let wx = &x[t + 1 - d..=t];
        let wy = &y[t + 1 - d..=t];
        out[t] = match op {
            RollingBinOp::TsCov => {
                if d <= opts.ddof {
                    f64::NAN
                } else {
                    let mx = stats::mean(wx);
                    let my = stats::mean(wy);
                    let acc: f64 = wx
                        .iter()
                        .zip(wy)
                        .map(|(a, b)| (a - mx) * (b - my))
                        .sum();
                    clean(acc / (d - opts.ddof) as f64)
                }
            }
            RollingBinOp::TsCorr => {
                let mx = stats::mean(wx);
                let my = stats::mean(wy);
                let mut num = 0.0;
                let mut den_x = 0.0;
                let mut den_y = 0.0;
                for i in 0..d {
                    let dx = wx[i] - mx;
                    let dy = wy[i] - my;
                    num += dx * dy;
                    den_x += dx * dx;
                    den_y += dy * dy;
                }
                if den_x <= 0.0 || den_y <= 0.0 {
                    f64::NAN
                } else {
                    clean(num / (den_x * den_y).sqrt())
                }
            }
        };
    }
    out
}
