//! IC-family metrics, factor quality, and factor-to-factor correlation.
//!
//! Everything is built on the daily cross-sectional correlation between
//! factor scores and forward returns. A date is valid when at least
//! `min_assets` asset pairs have both values and both sides have positive
//! cross-sectional variance; invalid dates are excluded from the averages,
//! never counted as zero.

use chrono::NaiveDate;
use ndarray::ArrayView2;
use serde::Serialize;
use thiserror::Error;

use crate::stats;
use crate::util::nan_as_null;

/// Minimum valid asset pairs per date for a correlation to count.
pub const DEFAULT_MIN_ASSETS: usize = 2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: factor is {factor:?}, returns are {returns:?}")]
    ShapeMismatch {
        factor: (usize, usize),
        returns: (usize, usize),
    },
    #[error("no valid days: every date lacks {min_assets}+ valid pairs or has zero variance")]
    NoValidDays { min_assets: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

/// Per-date cross-sectional correlation series; NaN marks invalid dates.
pub fn daily_cs_corr(
    factor: ArrayView2<f64>,
    returns: ArrayView2<f64>,
    method: CorrMethod,
    min_assets: usize,
) -> Result<Vec<f64>, MetricsError> {
    if factor.dim() != returns.dim() {
        return Err(MetricsError::ShapeMismatch {
            factor: factor.dim(),
            returns: returns.dim(),
        });
    }
    let (t_max, n_assets) = factor.dim();
    let mut out = vec![f64::NAN; t_max];
    let mut xs = Vec::with_capacity(n_assets);
    let mut ys = Vec::with_capacity(n_assets);
    for t in 0..t_max {
        xs.clear();
        ys.clear();
        for a in 0..n_assets {
            let x = factor[(t, a)];
            let y = returns[(t, a)];
            if !x.is_nan() && !y.is_nan() {
                xs.push(x);
                ys.push(y);
            }
        }
        if xs.len() < min_assets.max(2) {
            continue;
        }
        out[t] = match method {
            CorrMethod::Pearson => stats::pearson(&xs, &ys),
            CorrMethod::Spearman => stats::spearman(&xs, &ys),
        };
    }
    Ok(out)
}

/// IC, ICIR, RIC, RICIR plus the underlying daily series.
///
/// IC and RIC take the absolute value of the time-series mean; the IR
/// variants keep the sign and divide by the sample standard deviation of the
/// daily series (NaN when fewer than two valid days or zero dispersion).
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    #[serde(with = "nan_as_null")]
    pub ic: f64,
    #[serde(with = "nan_as_null")]
    pub icir: f64,
    #[serde(with = "nan_as_null")]
    pub ric: f64,
    #[serde(with = "nan_as_null")]
    pub ricir: f64,
    pub valid_days: usize,
    #[serde(skip)]
    pub daily_pearson: Vec<f64>,
    #[serde(skip)]
    pub daily_spearman: Vec<f64>,
}

fn mean_and_ir(series: &[f64]) -> (f64, f64, usize) {
    let valid: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        return (f64::NAN, f64::NAN, 0);
    }
    let m = stats::mean(&valid);
    let ir = if valid.len() < 2 {
        f64::NAN
    } else {
        let sd = stats::sample_std(&valid);
        if sd > 0.0 {
            m / sd
        } else {
            f64::NAN
        }
    };
    (m, ir, valid.len())
}

pub fn ic_suite(
    factor: ArrayView2<f64>,
    returns: ArrayView2<f64>,
    min_assets: usize,
) -> Result<MetricReport, MetricsError> {
    let daily_pearson = daily_cs_corr(factor, returns, CorrMethod::Pearson, min_assets)?;
    let daily_spearman = daily_cs_corr(factor, returns, CorrMethod::Spearman, min_assets)?;
    let (mean_p, icir, valid_days) = mean_and_ir(&daily_pearson);
    let (mean_s, ricir, _) = mean_and_ir(&daily_spearman);
    if valid_days == 0 {
        return Err(MetricsError::NoValidDays { min_assets });
    }
    Ok(MetricReport {
        ic: mean_p.abs(),
        icir,
        ric: mean_s.abs(),
        ricir,
        valid_days,
        daily_pearson,
        daily_spearman,
    })
}

/// Factor quality: |ICIR| on the given (training) slice, with every
/// degenerate case (no valid days, zero dispersion) mapped to 0 so the
/// quality ordering stays total.
pub fn quality(factor: ArrayView2<f64>, returns: ArrayView2<f64>, min_assets: usize) -> f64 {
    match ic_suite(factor, returns, min_assets) {
        Ok(report) => {
            let q = report.icir.abs();
            if q.is_nan() {
                0.0
            } else {
                q
            }
        }
        Err(_) => 0.0,
    }
}

/// Mean over valid dates of the daily cross-sectional Pearson correlation
/// between two factors; NaN when no date is valid.
pub fn factor_corr(a: ArrayView2<f64>, b: ArrayView2<f64>, min_assets: usize) -> f64 {
    let Ok(daily) = daily_cs_corr(a, b, CorrMethod::Pearson, min_assets) else {
        return f64::NAN;
    };
    let valid: Vec<f64> = daily.into_iter().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        f64::NAN
    } else {
        stats::mean(&valid)
    }
}

/// Export the daily series as `date,pearson,spearman`; invalid days are
/// empty fields.
pub fn write_daily_csv(
    dates: &[NaiveDate],
    report: &MetricReport,
    mut w: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "date,pearson,spearman")?;
    for (i, d) in dates.iter().enumerate() {
        let p = report.daily_pearson.get(i).copied().unwrap_or(f64::NAN);
        let s = report.daily_spearman.get(i).copied().unwrap_or(f64::NAN);
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        writeln!(w, "{d},{},{}", fmt(p), fmt(s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn perfect_correlation_day() {
        let f = arr2(&[[1.0, 2.0, 3.0]]);
        let r = f.clone();
        let d = daily_cs_corr(f.view(), r.view(), CorrMethod::Pearson, 2).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        let d = daily_cs_corr(f.view(), (-r).view(), CorrMethod::Pearson, 2).unwrap();
        assert!((d[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_asset_hand_case() {
        let f = arr2(&[[1.0, 2.0, 3.0]]);
        let r = arr2(&[[2.0, 1.0, 3.0]]);
        let p = daily_cs_corr(f.view(), r.view(), CorrMethod::Pearson, 2).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        let s = daily_cs_corr(f.view(), r.view(), CorrMethod::Spearman, 2).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_days_are_excluded() {
        // constant factor -> zero variance -> invalid day
        let f = arr2(&[[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]]);
        let r = arr2(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let d = daily_cs_corr(f.view(), r.view(), CorrMethod::Pearson, 2).unwrap();
        assert!(d[0].is_nan());
        assert!((d[1] - 1.0).abs() < 1e-12);
        let report = ic_suite(f.view(), r.view(), 2).unwrap();
        assert_eq!(report.valid_days, 1);
        assert!(report.icir.is_nan());
    }

    #[test]
    fn ic_takes_absolute_value() {
        // two days of rho = -0.5 each (factor = -returns scaled)
        let f = arr2(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let r = arr2(&[[3.0, 2.0, 1.0], [3.0, 2.0, 1.0]]);
        let report = ic_suite(f.view(), r.view(), 2).unwrap();
        assert!((report.ic - 1.0).abs() < 1e-12);
        // and the IR of a constant series is NaN
        assert!(report.icir.is_nan());
    }

    #[test]
    fn icir_hand_arithmetic() {
        // rho_d = [0.1, 0.3] -> ic = 0.2, icir = 0.2 / std([0.1, 0.3])
        let (m, ir, n) = mean_and_ir(&[0.1, 0.3]);
        assert!((m - 0.2).abs() < 1e-12);
        assert_eq!(n, 2);
        let expected = 0.2 / (2.0f64).sqrt() / 0.1; // sample std = 0.1*sqrt(2)
        assert!((ir - expected).abs() < 1e-9);
        assert!((ir - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zero_valid_days_is_an_error() {
        let f = Array2::from_elem((2, 3), f64::NAN);
        let r = Array2::from_elem((2, 3), 1.0);
        assert!(matches!(
            ic_suite(f.view(), r.view(), 2),
            Err(MetricsError::NoValidDays { .. })
        ));
    }

    #[test]
    fn quality_degenerate_is_zero() {
        let f = Array2::from_elem((3, 3), 2.5);
        let mut r = Array2::from_elem((3, 3), 0.0);
        for a in 0..3 {
            r[(0, a)] = a as f64;
        }
        assert_eq!(quality(f.view(), r.view(), 2), 0.0);
    }

    #[test]
    fn factor_corr_self_and_negation() {
        let a = arr2(&[[1.0, 2.0, 4.0], [2.0, 1.0, 3.0]]);
        assert!((factor_corr(a.view(), a.view(), 2) - 1.0).abs() < 1e-12);
        let neg = -a.clone();
        assert!((factor_corr(a.view(), neg.view(), 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn factor_corr_no_valid_day_is_nan() {
        let a = Array2::from_elem((2, 2), f64::NAN);
        let b = Array2::from_elem((2, 2), 1.0);
        assert!(factor_corr(a.view(), b.view(), 2).is_nan());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array2::from_elem((2, 2), 1.0);
        let b = Array2::from_elem((3, 2), 1.0);
        assert!(matches!(
            daily_cs_corr(a.view(), b.view(), CorrMethod::Pearson, 2),
            Err(MetricsError::ShapeMismatch { .. })
        ));
    }
}
