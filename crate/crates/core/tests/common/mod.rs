//! Shared test fixtures: a naive per-cell reference evaluator (independent of
//! the engine's kernels), a seeded random expression generator, and synthetic
//! panel builders.
//!
//! The oracle follows the same documented conventions as the engine
//! (eps = 1e-8, sample moments, full-window validity, endpoint-only lag
//! operators, seeded carry-forward EMA, non-finite results become NaN) but is
//! written as plain per-cell loops with no incremental state, so it exercises
//! the engine's indexing, masking, and window bookkeeping from an independent
//! code path.

#![allow(dead_code)]

use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use alphamine::expr::{BinaryOp, Expr, Feature, RollingBinOp, RollingOp, UnaryOp};
use alphamine::panel::Panel;

const EPS: f64 = 1e-8;

fn o_clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

fn o_guard(y: f64) -> f64 {
    if y.is_nan() {
        f64::NAN
    } else if y >= 0.0 {
        y.max(EPS)
    } else {
        y.min(-EPS)
    }
}

fn o_sign(x: f64) -> f64 {
    if x.is_nan() {
        f64::NAN
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Average-tie rank (1-based) of `v` within `values`, counted directly.
fn rank_among(values: &[f64], v: f64) -> f64 {
    let mut less = 0usize;
    let mut equal = 0usize;
    for &x in values {
        if x < v {
            less += 1;
        } else if x == v {
            equal += 1;
        }
    }
    less as f64 + (equal as f64 + 1.0) / 2.0
}

pub fn oracle_eval(expr: &Expr, panel: &Panel) -> Array2<f64> {
    let (t_max, n_assets) = (panel.n_dates(), panel.n_assets());
    match expr {
        Expr::Feature(f) => panel.feature(*f).clone(),
        Expr::IntConst(v) => Array2::from_elem((t_max, n_assets), *v as f64),
        Expr::FloatConst(v) => Array2::from_elem((t_max, n_assets), *v),
        Expr::Unary(op, c) => {
            let x = oracle_eval(c, panel);
            if *op == UnaryOp::Rank {
                return oracle_rank(&x);
            }
            let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
            for t in 0..t_max {
                for a in 0..n_assets {
                    let v = x[(t, a)];
                    let r = match op {
                        UnaryOp::Abs => v.abs(),
                        UnaryOp::Sign => o_sign(v),
                        UnaryOp::Log => {
                            let arg = v + EPS;
                            if arg > 0.0 {
                                arg.ln()
                            } else {
                                f64::NAN
                            }
                        }
                        UnaryOp::SLog1p => o_sign(v) * (1.0 + v.abs()).ln(),
                        UnaryOp::Inv => 1.0 / o_guard(v),
                        UnaryOp::Rank => unreachable!(),
                    };
                    out[(t, a)] = o_clean(r);
                }
            }
            out
        }
        Expr::Binary(op, l, r) => {
            let xl = oracle_eval(l, panel);
            let xr = oracle_eval(r, panel);
            let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
            for t in 0..t_max {
                for a in 0..n_assets {
                    let x = xl[(t, a)];
                    let y = xr[(t, a)];
                    let v = match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => x / o_guard(y),
                        BinaryOp::Pow => x.powf(y),
                        BinaryOp::Greater => {
                            if x.is_nan() || y.is_nan() {
                                f64::NAN
                            } else if x > y {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        BinaryOp::Less => {
                            if x.is_nan() || y.is_nan() {
                                f64::NAN
                            } else if x < y {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        BinaryOp::GetGreater => {
                            if x.is_nan() || y.is_nan() {
                                f64::NAN
                            } else if x > y {
                                x
                            } else {
                                y
                            }
                        }
                        BinaryOp::GetLess => {
                            if x.is_nan() || y.is_nan() {
                                f64::NAN
                            } else if x < y {
                                x
                            } else {
                                y
                            }
                        }
                    };
                    out[(t, a)] = o_clean(v);
                }
            }
            out
        }
        Expr::Rolling(op, c, d) => {
            let x = oracle_eval(c, panel);
            oracle_rolling(*op, &x, *d as usize)
        }
        Expr::RollingBin(op, l, r, d) => {
            let xl = oracle_eval(l, panel);
            let xr = oracle_eval(r, panel);
            oracle_rolling2(*op, &xl, &xr, *d as usize)
        }
    }
}

fn oracle_rank(x: &Array2<f64>) -> Array2<f64> {
    let (t_max, n_assets) = x.dim();
    let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
    for t in 0..t_max {
        let valid: Vec<f64> = (0..n_assets)
            .map(|a| x[(t, a)])
            .filter(|v| !v.is_nan())
            .collect();
        let n = valid.len();
        if n == 0 {
            continue;
        }
        for a in 0..n_assets {
            let v = x[(t, a)];
            if v.is_nan() {
                continue;
            }
            out[(t, a)] = if n == 1 {
                0.5
            } else {
                (rank_among(&valid, v) - 1.0) / (n as f64 - 1.0)
            };
        }
    }
    out
}

/// Gather the value window [t-d+1, t]; None when out of range or any NaN.
fn window_at(col: &[f64], t: usize, d: usize) -> Option<Vec<f64>> {
    if t + 1 < d {
        return None;
    }
    let w: Vec<f64> = col[t + 1 - d..=t].to_vec();
    if w.iter().any(|v| v.is_nan()) {
        None
    } else {
        Some(w)
    }
}

fn o_mean(w: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in w {
        s += v;
    }
    s / w.len() as f64
}

fn o_var(w: &[f64], ddof: usize) -> f64 {
    if w.len() <= ddof {
        return f64::NAN;
    }
    let m = o_mean(w);
    let mut ss = 0.0;
    for v in w {
        ss += (v - m) * (v - m);
    }
    ss / (w.len() - ddof) as f64
}

fn o_median(w: &[f64]) -> f64 {
    let mut buf = w.to_vec();
    buf.sort_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        (buf[n / 2 - 1] + buf[n / 2]) / 2.0
    }
}

fn oracle_rolling(op: RollingOp, x: &Array2<f64>, d: usize) -> Array2<f64> {
    let (t_max, n_assets) = x.dim();
    let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
    for a in 0..n_assets {
        let col: Vec<f64> = (0..t_max).map(|t| x[(t, a)]).collect();
        match op {
            RollingOp::Ref | RollingOp::TsDelta | RollingOp::TsRatio | RollingOp::TsPctChange => {
                for t in d..t_max {
                    let now = col[t];
                    let past = col[t - d];
                    if now.is_nan() || past.is_nan() {
                        continue;
                    }
                    out[(t, a)] = o_clean(match op {
                        RollingOp::Ref => past,
                        RollingOp::TsDelta => now - past,
                        RollingOp::TsRatio => now / o_guard(past),
                        RollingOp::TsPctChange => now / o_guard(past) - 1.0,
                        _ => unreachable!(),
                    });
                }
            }
            RollingOp::TsEMA => {
                let alpha = 2.0 / (d as f64 + 1.0);
                let mut state: Option<f64> = None;
                for t in 0..t_max {
                    let v = col[t];
                    if !v.is_nan() {
                        state = Some(match state {
                            None => v,
                            Some(prev) => o_clean(alpha * v + (1.0 - alpha) * prev),
                        });
                    }
                    if let Some(s) = state {
                        out[(t, a)] = s;
                    }
                }
            }
            _ => {
                for t in 0..t_max {
                    let Some(w) = window_at(&col, t, d) else {
                        continue;
                    };
                    out[(t, a)] = oracle_window_stat(op, &w);
                }
            }
        }
    }
    out
}

fn oracle_window_stat(op: RollingOp, w: &[f64]) -> f64 {
    let d = w.len();
    let nf = d as f64;
    match op {
        RollingOp::TsMean => o_clean(o_mean(w)),
        RollingOp::TsSum => {
            let mut s = 0.0;
            for v in w {
                s += v;
            }
            o_clean(s)
        }
        RollingOp::TsStd => o_clean(o_var(w, 1).sqrt()),
        RollingOp::TsVar => o_clean(o_var(w, 1)),
        RollingOp::TsMin => o_clean(w.iter().copied().fold(f64::INFINITY, f64::min)),
        RollingOp::TsMax => o_clean(w.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        RollingOp::TsMinMaxDiff => {
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            o_clean(hi - lo)
        }
        RollingOp::TsMaxDiff => {
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            o_clean(w[d - 1] - hi)
        }
        RollingOp::TsMinDiff => {
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            o_clean(w[d - 1] - lo)
        }
        RollingOp::TsMed => o_clean(o_median(w)),
        RollingOp::TsMad => {
            let med = o_median(w);
            let dev: Vec<f64> = w.iter().map(|v| (v - med).abs()).collect();
            o_clean(o_median(&dev))
        }
        RollingOp::TsIr => o_clean(o_mean(w) / o_var(w, 1).sqrt()),
        RollingOp::TsSkew => {
            if d < 3 {
                return f64::NAN;
            }
            let m = o_mean(w);
            let mut m2 = 0.0;
            let mut m3 = 0.0;
            for v in w {
                let dev = v - m;
                m2 += dev * dev;
                m3 += dev * dev * dev;
            }
            m2 /= nf;
            m3 /= nf;
            if m2 <= 0.0 {
                return f64::NAN;
            }
            o_clean((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * (m3 / m2.powf(1.5)))
        }
        RollingOp::TsKurt => {
            if d < 4 {
                return f64::NAN;
            }
            let m = o_mean(w);
            let mut m2 = 0.0;
            let mut m4 = 0.0;
            for v in w {
                let dev = v - m;
                let dev2 = dev * dev;
                m2 += dev2;
                m4 += dev2 * dev2;
            }
            m2 /= nf;
            m4 /= nf;
            if m2 <= 0.0 {
                return f64::NAN;
            }
            let g2 = m4 / (m2 * m2) - 3.0;
            o_clean((nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0))
        }
        RollingOp::TsRank => {
            if d == 1 {
                return 0.5;
            }
            (rank_among(w, w[d - 1]) - 1.0) / (nf - 1.0)
        }
        RollingOp::TsWMA => {
            let mut acc = 0.0;
            for (j, v) in w.iter().enumerate() {
                acc += (j + 1) as f64 * v;
            }
            o_clean(acc / (d * (d + 1) / 2) as f64)
        }
        _ => unreachable!("dedicated paths above"),
    }
}

fn oracle_rolling2(op: RollingBinOp, x: &Array2<f64>, y: &Array2<f64>, d: usize) -> Array2<f64> {
    let (t_max, n_assets) = x.dim();
    let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
    for a in 0..n_assets {
        let cx: Vec<f64> = (0..t_max).map(|t| x[(t, a)]).collect();
        let cy: Vec<f64> = (0..t_max).map(|t| y[(t, a)]).collect();
        for t in 0..t_max {
            let (Some(wx), Some(wy)) = (window_at(&cx, t, d), window_at(&cy, t, d)) else {
                continue;
            };
            out[(t, a)] = match op {
                RollingBinOp::TsCov => {
                    if d <= 1 {
                        f64::NAN
                    } else {
                        let mx = o_mean(&wx);
                        let my = o_mean(&wy);
                        let mut acc = 0.0;
                        for i in 0..d {
                            acc += (wx[i] - mx) * (wy[i] - my);
                        }
                        o_clean(acc / (d - 1) as f64)
                    }
                }
                RollingBinOp::TsCorr => {
                    let mx = o_mean(&wx);
                    let my = o_mean(&wy);
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
                        o_clean(num / (den_x * den_y).sqrt())
                    }
                }
            };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// random expressions
// ---------------------------------------------------------------------------

const WINDOWS: [u32; 6] = [1, 2, 3, 5, 10, 20];
const FLOATS: [f64; 6] = [0.0, 0.0001, 0.001, 0.01, 1.0, 2.0];

fn random_feature(rng: &mut ChaCha8Rng) -> Feature {
    Feature::ALL[rng.gen_range(0..Feature::ALL.len())]
}

fn random_leaf(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..10u8) {
        0 => Expr::FloatConst(FLOATS[rng.gen_range(0..FLOATS.len())]),
        1 => Expr::IntConst(rng.gen_range(1..=20)),
        _ => Expr::Feature(random_feature(rng)),
    }
}

/// Random well-formed expression of depth <= `max_depth`.
pub fn random_expr(rng: &mut ChaCha8Rng, max_depth: usize) -> Expr {
    if max_depth == 0 {
        return random_leaf(rng);
    }
    match rng.gen_range(0..100u8) {
        0..=19 => random_leaf(rng),
        20..=44 => {
            let ops = [
                UnaryOp::Abs,
                UnaryOp::Sign,
                UnaryOp::Log,
                UnaryOp::SLog1p,
                UnaryOp::Inv,
                UnaryOp::Rank,
            ];
            Expr::Unary(
                ops[rng.gen_range(0..ops.len())],
                Box::new(random_expr(rng, max_depth - 1)),
            )
        }
        45..=69 => {
            let ops = [
                BinaryOp::Add,
                BinaryOp::Sub,
                BinaryOp::Mul,
                BinaryOp::Div,
                BinaryOp::Pow,
                BinaryOp::Greater,
                BinaryOp::Less,
                BinaryOp::GetGreater,
                BinaryOp::GetLess,
            ];
            let op = ops[rng.gen_range(0..ops.len())];
            let left = random_expr(rng, max_depth - 1);
            let right = if op == BinaryOp::Pow {
                // constant exponent; 0.5 exercises the NaN branch
                Expr::FloatConst([0.5, 1.0, 2.0][rng.gen_range(0..3)])
            } else {
                random_expr(rng, max_depth - 1)
            };
            Expr::Binary(op, Box::new(left), Box::new(right))
        }
        70..=89 => {
            let ops = [
                RollingOp::Ref,
                RollingOp::TsMean,
                RollingOp::TsSum,
                RollingOp::TsStd,
                RollingOp::TsVar,
                RollingOp::TsMin,
                RollingOp::TsMax,
                RollingOp::TsMed,
                RollingOp::TsMad,
                RollingOp::TsMinMaxDiff,
                RollingOp::TsMaxDiff,
                RollingOp::TsMinDiff,
                RollingOp::TsIr,
                RollingOp::TsSkew,
                RollingOp::TsKurt,
                RollingOp::TsRank,
                RollingOp::TsDelta,
                RollingOp::TsRatio,
                RollingOp::TsPctChange,
                RollingOp::TsWMA,
                RollingOp::TsEMA,
            ];
            Expr::Rolling(
                ops[rng.gen_range(0..ops.len())],
                Box::new(random_expr(rng, max_depth - 1)),
                WINDOWS[rng.gen_range(0..WINDOWS.len())],
            )
        }
        _ => {
            let op = if rng.gen_bool(0.5) {
                RollingBinOp::TsCov
            } else {
                RollingBinOp::TsCorr
            };
            Expr::RollingBin(
                op,
                Box::new(random_expr(rng, max_depth - 1)),
                Box::new(random_expr(rng, max_depth - 1)),
                WINDOWS[rng.gen_range(0..WINDOWS.len())],
            )
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic panels
// ---------------------------------------------------------------------------

fn dates(t: usize) -> Vec<NaiveDate> {
    (0..t)
        .map(|i| NaiveDate::from_num_days_from_ce_opt(730_000 + i as i32).expect("valid date"))
        .collect()
}

fn asset_names(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("A{a:03}")).collect()
}

/// OHLC-consistent random-walk panel with a fraction of cells blanked to NaN.
pub fn random_panel(rng: &mut ChaCha8Rng, t: usize, n: usize, nan_frac: f64) -> Panel {
    let mut open = Array2::from_elem((t, n), f64::NAN);
    let mut high = open.clone();
    let mut low = open.clone();
    let mut close = open.clone();
    let mut vwap = open.clone();
    let mut volume = open.clone();
    for a in 0..n {
        let mut price = 50.0 + a as f64;
        for i in 0..t {
            price *= 1.0 + rng.gen_range(-0.05..0.05);
            let h = price * (1.0 + rng.gen_range(0.0..0.05));
            let l = price * (1.0 - rng.gen_range(0.0..0.05));
            close[(i, a)] = price;
            high[(i, a)] = h;
            low[(i, a)] = l;
            open[(i, a)] = rng.gen_range(l..=h);
            vwap[(i, a)] = rng.gen_range(l..=h);
            volume[(i, a)] = rng.gen_range(1.0e4..1.0e6);
        }
    }
    for m in [
        &mut open,
        &mut high,
        &mut low,
        &mut close,
        &mut vwap,
        &mut volume,
    ] {
        for v in m.iter_mut() {
            if rng.gen_bool(nan_frac) {
                *v = f64::NAN;
            }
        }
    }
    Panel::from_parts(dates(t), asset_names(n), open, high, low, close, vwap, volume)
        .expect("synthetic panel is consistent")
}

/// Panel with a planted signal: the ratio low/high (per date, per asset)
/// drives the next day's cross-sectional return, plus noise. The hidden
/// three-node expression recovering the driver exactly is Div($low, $high).
pub fn planted_panel(rng: &mut ChaCha8Rng, t: usize, n: usize, beta: f64, noise: f64) -> Panel {
    // driver in [0.90, 0.96]
    let mut driver = Array2::zeros((t, n));
    for i in 0..t {
        for a in 0..n {
            driver[(i, a)] = rng.gen_range(0.90..0.96);
        }
    }
    let mut close = Array2::zeros((t, n));
    for a in 0..n {
        close[(0, a)] = 100.0 * (1.0 + a as f64 / n as f64);
    }
    for i in 1..t {
        // cross-sectional z-score of yesterday's driver
        let row: Vec<f64> = (0..n).map(|a| driver[(i - 1, a)]).collect();
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-12);
        for a in 0..n {
            let z = (driver[(i - 1, a)] - mean) / std;
            let ret = beta * z + rng.gen_range(-noise..noise);
            close[(i, a)] = close[(i - 1, a)] * (1.0 + ret);
        }
    }
    let mut open = Array2::zeros((t, n));
    let mut high = Array2::zeros((t, n));
    let mut low = Array2::zeros((t, n));
    let mut vwap = Array2::zeros((t, n));
    let mut volume = Array2::zeros((t, n));
    for i in 0..t {
        for a in 0..n {
            let c = close[(i, a)];
            let h = c * (1.0 + rng.gen_range(0.01..0.03));
            let l = h * driver[(i, a)]; // low/high == driver exactly
            high[(i, a)] = h;
            low[(i, a)] = l;
            open[(i, a)] = rng.gen_range(l..=c);
            vwap[(i, a)] = rng.gen_range(l..=h);
            volume[(i, a)] = rng.gen_range(1.0e4..1.0e6);
        }
    }
    Panel::from_parts(dates(t), asset_names(n), open, high, low, close, vwap, volume)
        .expect("planted panel is consistent")
}

/// Compare engine output to the oracle: exact NaN masks and
/// 1e-9 relative / 1e-12 absolute agreement elsewhere. Returns a description
/// of the first mismatch.
pub fn compare_matrices(engine: &Array2<f64>, oracle: &Array2<f64>) -> Result<(), String> {
    if engine.dim() != oracle.dim() {
        return Err(format!(
            "shape mismatch: {:?} vs {:?}",
            engine.dim(),
            oracle.dim()
        ));
    }
    let (t_max, n_assets) = engine.dim();
    for t in 0..t_max {
        for a in 0..n_assets {
            let e = engine[(t, a)];
            let o = oracle[(t, a)];
            match (e.is_nan(), o.is_nan()) {
                (true, true) => {}
                (true, false) | (false, true) => {
                    return Err(format!(
                        "NaN mask mismatch at ({t}, {a}): engine={e}, oracle={o}"
                    ));
                }
                (false, false) => {
                    let diff = (e - o).abs();
                    let tol = 1e-12 + 1e-9 * e.abs().max(o.abs());
                    if diff > tol {
                        return Err(format!(
                            "value mismatch at ({t}, {a}): engine={e}, oracle={o}, diff={diff}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
