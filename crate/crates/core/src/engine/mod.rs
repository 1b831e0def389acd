//! Vectorized evaluation of expressions over a panel.
//!
//! `evaluate` never fails at runtime: every numerical pathology (division
//! blow-ups, logs of non-positive values, overflow) yields NaN in the
//! affected cells. Time-series operators require a full window of valid
//! observations (`min_periods = d`); the point-lag operators (`Ref`,
//! `TsDelta`, `TsRatio`, `TsPctChange`) only require their two endpoints, and
//! `TsEMA` is NaN only before an asset's first valid observation.
//!
//! Evaluation is pure; many expressions can be evaluated concurrently over
//! one shared panel.

mod rolling;

use ndarray::{Array2, Zip};

use crate::expr::{BinaryOp, Expr, UnaryOp};
use crate::panel::{FactorMatrix, Panel};
use crate::stats;

/// Stability constant added to denominators and log arguments.
pub const EPS: f64 = 1e-8;

/// Numeric conventions, surfaced so an alternate convention can be tested.
/// Defaults: sample moments (ddof = 1) and `EPS` guards.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub ddof: usize,
    pub eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { ddof: 1, eps: EPS }
    }
}

/// Map non-finite results to NaN; operators never emit infinities.
#[inline]
pub(crate) fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Sign-preserving denominator guard: `sign(y) * max(|y|, eps)` with
/// `sign(0) = +1`, so a ratio never flips sign near zero.
#[inline]
pub(crate) fn guard_denominator(y: f64, eps: f64) -> f64 {
    if y.is_nan() {
        f64::NAN
    } else if y >= 0.0 {
        y.max(eps)
    } else {
        y.min(-eps)
    }
}

#[inline]
fn sign3(x: f64) -> f64 {
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

/// Evaluate with default conventions.
pub fn evaluate(expr: &Expr, panel: &Panel) -> FactorMatrix {
    evaluate_with(expr, panel, &EvalOptions::default())
}

pub fn evaluate_with(expr: &Expr, panel: &Panel, opts: &EvalOptions) -> FactorMatrix {
    FactorMatrix {
        values: eval(expr, panel, opts),
    }
}

fn eval(expr: &Expr, panel: &Panel, opts: &EvalOptions) -> Array2<f64> {
    let shape = (panel.n_dates(), panel.n_assets());
    match expr {
        Expr::Feature(f) => panel.feature(*f).clone(),
        Expr::IntConst(v) => Array2::from_elem(shape, *v as f64),
        Expr::FloatConst(v) => Array2::from_elem(shape, *v),
        Expr::Unary(UnaryOp::Rank, c) => cross_rank(&eval(c, panel, opts)),
        Expr::Unary(op, c) => {
            let eps = opts.eps;
            let x = eval(c, panel, opts);
            let f: fn(f64, f64) -> f64 = match op {
                UnaryOp::Abs => |x, _| x.abs(),
                UnaryOp::Sign => |x, _| sign3(x),
                UnaryOp::Log => |x, eps| {
                    let arg = x + eps;
                    if arg > 0.0 {
                        arg.ln()
                    } else {
                        f64::NAN
                    }
                },
                UnaryOp::SLog1p => |x, _| sign3(x) * (1.0 + x.abs()).ln(),
                UnaryOp::Inv => |x, eps| 1.0 / guard_denominator(x, eps),
                UnaryOp::Rank => unreachable!("handled above"),
            };
            x.mapv(|v| clean(f(v, eps)))
        }
        Expr::Binary(op, l, r) => {
            let eps = opts.eps;
            let a = eval(l, panel, opts);
            let b = eval(r, panel, opts);
            let f: fn(f64, f64, f64) -> f64 = match op {
                BinaryOp::Add => |x, y, _| x + y,
                BinaryOp::Sub => |x, y, _| x - y,
                BinaryOp::Mul => |x, y, _| x * y,
                BinaryOp::Div => |x, y, eps| x / guard_denominator(y, eps),
                BinaryOp::Pow => |x, y, _| x.powf(y),
                BinaryOp::Greater => |x, y, _| {
                    if x.is_nan() || y.is_nan() {
                        f64::NAN
                    } else {
                        f64::from(x > y)
                    }
                },
                BinaryOp::Less => |x, y, _| {
                    if x.is_nan() || y.is_nan() {
                        f64::NAN
                    } else {
                        f64::from(x < y)
                    }
                },
                BinaryOp::GetGreater => |x, y, _| {
                    if x.is_nan() || y.is_nan() {
                        f64::NAN
                    } else {
                        x.max(y)
                    }
                },
                BinaryOp::GetLess => |x, y, _| {
                    if x.is_nan() || y.is_nan() {
                        f64::NAN
                    } else {
                        x.min(y)
                    }
                },
            };
            Zip::from(&a).and(&b).map_collect(|&x, &y| clean(f(x, y, eps)))
        }
        Expr::Rolling(op, c, d) => {
            let x = eval(c, panel, opts);
            apply_columns(&x, |col| rolling::roll_column(*op, col, *d as usize, opts))
        }
        Expr::RollingBin(op, l, r, d) => {
            let a = eval(l, panel, opts);
            let b = eval(r, panel, opts);
            apply_columns2(&a, &b, |x, y| {
                rolling::roll2_column(*op, x, y, *d as usize, opts)
            })
        }
    }
}

fn apply_columns(x: &Array2<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> Array2<f64> {
    let (t, n) = x.dim();
    let mut out = Array2::from_elem((t, n), f64::NAN);
    for a in 0..n {
        let col: Vec<f64> = x.column(a).to_vec();
        let res = f(&col);
        for (i, v) in res.into_iter().enumerate() {
            out[(i, a)] = v;
        }
    }
    out
}

fn apply_columns2(
    x: &Array2<f64>,
    y: &Array2<f64>,
    f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Array2<f64> {
    let (t, n) = x.dim();
    let mut out = Array2::from_elem((t, n), f64::NAN);
    for a in 0..n {
        let cx: Vec<f64> = x.column(a).to_vec();
        let cy: Vec<f64> = y.column(a).to_vec();
        let res = f(&cx, &cy);
        for (i, v) in res.into_iter().enumerate() {
            out[(i, a)] = v;
        }
    }
    out
}

/// Cross-sectional rank per date: average ranks of the valid entries mapped
/// to [0, 1] by `(r - 1) / (n - 1)`; a single valid entry ranks 0.5.
fn cross_rank(x: &Array2<f64>) -> Array2<f64> {
    let (t_max, n_assets) = x.dim();
    let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
    for t in 0..t_max {
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for a in 0..n_assets {
            let v = x[(t, a)];
            if !v.is_nan() {
                idx.push(a);
                vals.push(v);
            }
        }
        match vals.len() {
            0 => {}
            1 => out[(t, idx[0])] = 0.5,
            n => {
                let ranks = stats::average_ranks(&vals);
                for (k, &a) in idx.iter().enumerate() {
                    out[(t, a)] = (ranks[k] - 1.0) / (n as f64 - 1.0);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use chrono::NaiveDate;
    use ndarray::Array2;

    fn panel_from_close(cols: Vec<Vec<f64>>) -> Panel {
        let t = cols[0].len();
        let n = cols.len();
        let mut close = Array2::from_elem((t, n), f64::NAN);
        for (a, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                close[(i, a)] = *v;
            }
        }
        let dates: Vec<NaiveDate> = (0..t)
            .map(|i| NaiveDate::from_num_days_from_ce_opt(737000 + i as i32).unwrap())
            .collect();
        let assets: Vec<String> = (0..n).map(|a| format!("A{a}")).collect();
        // envelope that stays valid for zero and negative close fixtures
        let high = close.mapv(|v| v + v.abs() + 1.0);
        let low = close.mapv(|v| v - v.abs() - 1.0);
        Panel::from_parts(
            dates,
            assets,
            close.clone(),
            high,
            low,
            close.clone(),
            close.clone(),
            close.mapv(f64::abs),
        )
        .unwrap()
    }

    #[test]
    fn ts_mean_warmup_and_values() {
        let p = panel_from_close(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let e = parse("TsMean($close, 3)").unwrap();
        let m = evaluate(&e, &p).values;
        assert!(m[(0, 0)].is_nan());
        assert!(m[(1, 0)].is_nan());
        assert_eq!(m[(2, 0)], 2.0);
        assert_eq!(m[(3, 0)], 3.0);
    }

    #[test]
    fn ts_corr_self_is_one() {
        let p = panel_from_close(vec![vec![1.0, 3.0, 2.0, 5.0, 4.0, 6.0, 5.5]]);
        let e = parse("TsCorr($close, $close, 5)").unwrap();
        let m = evaluate(&e, &p).values;
        for t in 4..7 {
            assert!((m[(t, 0)] - 1.0).abs() < 1e-12, "t={t}: {}", m[(t, 0)]);
        }
    }

    #[test]
    fn rank_three_assets() {
        let p = panel_from_close(vec![vec![3.0], vec![1.0], vec![2.0]]);
        let e = parse("Rank($close)").unwrap();
        let m = evaluate(&e, &p).values;
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 2)], 0.5);
    }

    #[test]
    fn rank_single_valid_is_half() {
        let mut close = Array2::from_elem((1, 2), f64::NAN);
        close[(0, 0)] = 7.0;
        let p = Panel::from_parts(
            vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()],
            vec!["A".into(), "B".into()],
            close.clone(),
            close.clone(),
            close.clone(),
            close.clone(),
            close.clone(),
            close.clone(),
        )
        .unwrap();
        let m = evaluate(&parse("Rank($close)").unwrap(), &p).values;
        assert_eq!(m[(0, 0)], 0.5);
        assert!(m[(0, 1)].is_nan());
    }

    #[test]
    fn figure_style_price_change() {
        // Div(Sub($open, $close), $open) with open=10, close=9 -> 0.1
        let dates = vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()];
        let open = Array2::from_elem((1, 1), 10.0);
        let close = Array2::from_elem((1, 1), 9.0);
        let p = Panel::from_parts(
            dates,
            vec!["A".into()],
            open.clone(),
            Array2::from_elem((1, 1), 10.5),
            Array2::from_elem((1, 1), 8.5),
            close,
            Array2::from_elem((1, 1), 9.5),
            Array2::from_elem((1, 1), 1.0),
        )
        .unwrap();
        let m = evaluate(&parse("Div(Sub($open, $close), $open)").unwrap(), &p).values;
        assert!((m[(0, 0)] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn div_guard_keeps_sign() {
        let p = panel_from_close(vec![vec![1.0, -1.0, 0.0]]);
        // Div(1.0, $close): at 0 the guard is +eps -> huge positive, cleaned only if inf
        let m = evaluate(&parse("Div(1.0, $close)").unwrap(), &p).values;
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 0)], -1.0);
        assert_eq!(m[(2, 0)], 1.0 / EPS);
    }

    #[test]
    fn pow_negative_base_non_integer_exponent_is_nan() {
        let p = panel_from_close(vec![vec![-2.0, 2.0]]);
        let m = evaluate(&parse("Pow($close, 0.5)").unwrap(), &p).values;
        assert!(m[(0, 0)].is_nan());
        assert!((m[(1, 0)] - 2.0f64.sqrt()).abs() < 1e-12);
        let m = evaluate(&parse("Pow($close, 2.0)").unwrap(), &p).values;
        assert_eq!(m[(0, 0)], 4.0);
    }

    #[test]
    fn log_of_nonpositive_is_nan() {
        let p = panel_from_close(vec![vec![-1.0, 0.0, 1.0]]);
        let m = evaluate(&parse("Log($close)").unwrap(), &p).values;
        assert!(m[(0, 0)].is_nan());
        assert!((m[(1, 0)] - EPS.ln()).abs() < 1e-12);
        assert!((m[(2, 0)] - (1.0 + EPS).ln()).abs() < 1e-15);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        let p = panel_from_close(vec![vec![0.0, 3.0, -3.0]]);
        let m = evaluate(&parse("Sign($close)").unwrap(), &p).values;
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(2, 0)], -1.0);
    }

    #[test]
    fn ts_ema_carries_over_gaps() {
        let mut close = Array2::from_elem((4, 1), f64::NAN);
        close[(1, 0)] = 2.0;
        close[(3, 0)] = 4.0;
        let p = Panel::from_parts(
            (0..4)
                .map(|i| NaiveDate::from_num_days_from_ce_opt(737000 + i).unwrap())
                .collect(),
            vec!["A".into()],
            close.clone(),
            close.clone(),
            close.clone(),
            close.clone(),
            close.clone(),
            close.mapv(f64::abs),
        )
        .unwrap();
        let m = evaluate(&parse("TsEMA($close, 3)").unwrap(), &p).values;
        assert!(m[(0, 0)].is_nan());
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(2, 0)], 2.0); // carried
        let alpha = 2.0 / 4.0;
        assert!((m[(3, 0)] - (alpha * 4.0 + (1.0 - alpha) * 2.0)).abs() < 1e-12);
    }
}
