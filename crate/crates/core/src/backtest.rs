//! Top-quantile long-only trading simulation with overlapping holds, plus
//! the AR/MDD/SR performance summary.
//!
//! Capital is split into `hold` equal tranches. Each day the maturing
//! tranche (opened `hold` days earlier) is closed and reopened equal-weighted
//! in the top `top_frac` of assets by signal (ties break toward the earlier
//! asset id). Positions are marked to market close-to-close daily, and the
//! round-trip cost is booked once per tranche cycle on its opening day. Days
//! with an all-NaN signal trade nothing and keep the prior holdings; a day
//! with too few valid signals parks that tranche in cash.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::nan_as_null;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("signal shape {signal:?} does not match close shape {close:?}")]
    ShapeMismatch {
        signal: (usize, usize),
        close: (usize, usize),
    },
    #[error("hold must be >= 1")]
    BadHold,
    #[error("top_frac must lie in (0, 1]")]
    BadTopFrac,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Fraction of valid-signal assets bought each day.
    pub top_frac: f64,
    /// Holding period in trading days (also the tranche count).
    pub hold: usize,
    /// Round-trip transaction cost per tranche cycle.
    pub cost_rt: f64,
    /// Periods per year used for annualization.
    pub periods_per_year: f64,
    /// Daily risk-free rate subtracted in the Sharpe ratio.
    pub risk_free_daily: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            top_frac: 0.2,
            hold: 20,
            cost_rt: 0.001,
            periods_per_year: 252.0,
            risk_free_daily: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestResult {
    pub daily_returns: Vec<f64>,
    /// Cumulative wealth after each day, starting from 1.
    pub wealth: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub ar: f64,
    #[serde(with = "nan_as_null")]
    pub mdd: f64,
    #[serde(with = "nan_as_null")]
    pub sr: f64,
    pub config: BacktestConfig,
    pub warnings: Vec<String>,
}

/// AR = K · mean(R); MDD = max peak-to-trough wealth loss (initial wealth 1
/// counts as a peak); SR = √K · mean(R - r_f) / sample std(R - r_f).
pub fn performance(daily_returns: &[f64], k: f64, risk_free_daily: f64) -> (f64, f64, f64) {
    if daily_returns.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = daily_returns.len() as f64;
    let mean = daily_returns.iter().sum::<f64>() / n;
    let ar = k * mean;

    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for r in daily_returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        mdd = f64::max(mdd, 1.0 - wealth / peak);
    }

    let sr = if daily_returns.len() < 2 {
        f64::NAN
    } else {
        let excess_mean = mean - risk_free_daily;
        let var = daily_returns
            .iter()
            .map(|r| {
                let d = (r - risk_free_daily) - excess_mean;
                d * d
            })
            .sum::<f64>()
            / (n - 1.0);
        let std = var.sqrt();
        if std > 0.0 {
            k.sqrt() * excess_mean / std
        } else {
            f64::NAN
        }
    };
    (ar, mdd, sr)
}

#[derive(Debug, Clone, Default)]
struct Tranche {
    /// Asset indices currently held; empty means cash.
    holdings: Vec<usize>,
}

/// Simulate the trading protocol over aligned signal and close matrices.
pub fn simulate(
    signal: ArrayView2<f64>,
    close: ArrayView2<f64>,
    cfg: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    if signal.dim() != close.dim() {
        return Err(BacktestError::ShapeMismatch {
            signal: signal.dim(),
            close: close.dim(),
        });
    }
    if cfg.hold < 1 {
        return Err(BacktestError::BadHold);
    }
    if !(cfg.top_frac > 0.0 && cfg.top_frac <= 1.0) {
        return Err(BacktestError::BadTopFrac);
    }
    let (t_max, n_assets) = signal.dim();
    let min_valid = (1.0 / cfg.top_frac).ceil() as usize;
    let mut tranches: Vec<Tranche> = vec![Tranche::default(); cfg.hold];
    let mut daily_returns = Vec::with_capacity(t_max);
    let mut warnings = Vec::new();

    for t in 0..t_max {
        // mark existing holdings close-to-close before any trading today
        let mut r_t = 0.0;
        if t > 0 {
            for tranche in &tranches {
                if tranche.holdings.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                for &a in &tranche.holdings {
                    let c0 = close[(t - 1, a)];
                    let c1 = close[(t, a)];
                    if c0.is_finite() && c1.is_finite() && c0 != 0.0 {
                        acc += c1 / c0 - 1.0;
                    }
                    // unmarkable assets are carried flat
                }
                r_t += acc / tranche.holdings.len() as f64 / cfg.hold as f64;
            }
        }

        // roll the maturing tranche using today's signal
        let mut valid: Vec<usize> = (0..n_assets).filter(|&a| !signal[(t, a)].is_nan()).collect();
        if !valid.is_empty() {
            let slot = t % cfg.hold;
            if valid.len() < min_valid {
                if !tranches[slot].holdings.is_empty() {
                    tranches[slot].holdings.clear();
                }
                warnings.push(format!(
                    "day {t}: only {} valid signals (need {min_valid}); tranche {slot} in cash",
                    valid.len()
                ));
            } else {
                valid.sort_by(|&a, &b| {
                    signal[(t, b)]
                        .total_cmp(&signal[(t, a)])
                        .then(a.cmp(&b))
                });
                let n_pick = ((cfg.top_frac * valid.len() as f64).ceil() as usize)
                    .clamp(1, valid.len());
                tranches[slot].holdings = valid[..n_pick].to_vec();
                r_t -= cfg.cost_rt / cfg.hold as f64;
            }
        }
        // all-NaN signal: no trading, prior holdings stay on

        daily_returns.push(r_t);
    }

    let mut wealth = Vec::with_capacity(t_max);
    let mut w = 1.0;
    for r in &daily_returns {
        w *= 1.0 + r;
        wealth.push(w);
    }
    let (ar, mdd, sr) = performance(&daily_returns, cfg.periods_per_year, cfg.risk_free_daily);
    Ok(BacktestResult {
        daily_returns,
        wealth,
        ar,
        mdd,
        sr,
        config: *cfg,
        warnings,
    })
}

/// Summary without the daily series, for JSON reports.
#[derive(Debug, Clone, Serialize)]
pub struct BacktestSummary {
    #[serde(with = "nan_as_null")]
    pub ar: f64,
    #[serde(with = "nan_as_null")]
    pub mdd: f64,
    #[serde(with = "nan_as_null")]
    pub sr: f64,
    pub days: usize,
}

impl BacktestResult {
    pub fn summary(&self) -> BacktestSummary {
        BacktestSummary {
            ar: self.ar,
            mdd: self.mdd,
            sr: self.sr,
            days: self.daily_returns.len(),
        }
    }

    /// `date,daily_return,wealth` rows, the data behind the wealth curve.
    pub fn write_curve_csv(
        &self,
        dates: &[chrono::NaiveDate],
        mut w: impl std::io::Write,
    ) -> std::io::Result<()> {
        writeln!(w, "date,daily_return,wealth")?;
        for (i, (r, wl)) in self.daily_returns.iter().zip(&self.wealth).enumerate() {
            match dates.get(i) {
                Some(d) => writeln!(w, "{d},{r},{wl}")?,
                None => writeln!(w, "{i},{r},{wl}")?,
            }
        }
        Ok(())
    }
}
