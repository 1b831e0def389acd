//! Dynamic combination of recently effective pool factors into one "Mega"
//! composite signal.
//!
//! Every `rebalance_every` rows the trailing mean daily Pearson correlation
//! of each member factor against forward returns is measured over the
//! `window` rows ending strictly before the rebalance row (no lookahead).
//! Members whose |trailing IC| clears the threshold are combined with
//! weights proportional to the signed IC, normalized to Σ|w| = 1, applied to
//! per-date cross-sectional z-scores of the raw factor values. Spans with no
//! qualifying member are NaN.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use thiserror::Error;

use crate::graph::NodeId;
use crate::metrics::{daily_cs_corr, CorrMethod, MetricsError};

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("integrator window must be >= 5, got {0}")]
    WindowTooShort(usize),
    #[error("rebalance interval must be >= 1")]
    BadRebalance,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MegaWeight {
    pub factor_id: NodeId,
    pub trailing_ic: f64,
    pub weight: f64,
}

/// Weights chosen at one rebalance row.
#[derive(Debug, Clone, Serialize)]
pub struct RebalanceRecord {
    pub row: usize,
    pub weights: Vec<MegaWeight>,
}

#[derive(Debug, Clone)]
pub struct MegaOutcome {
    pub values: Array2<f64>,
    pub history: Vec<RebalanceRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    /// Trailing IC window, rows.
    pub window: usize,
    /// Minimum |trailing IC| for inclusion.
    pub threshold: f64,
    /// Rebalance every this many rows.
    pub rebalance_every: usize,
    pub min_assets: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            window: 60,
            threshold: 0.01,
            rebalance_every: 5,
            min_assets: 2,
        }
    }
}

/// Per-date cross-sectional z-score (population std); a date with fewer than
/// two valid entries or zero dispersion is NaN everywhere.
fn zscore_rows(values: ArrayView2<f64>) -> Array2<f64> {
    let (t_max, n_assets) = values.dim();
    let mut out = Array2::from_elem((t_max, n_assets), f64::NAN);
    for t in 0..t_max {
        let valid: Vec<f64> = (0..n_assets)
            .map(|a| values[(t, a)])
            .filter(|v| !v.is_nan())
            .collect();
        if valid.len() < 2 {
            continue;
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        let var =
            valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid.len() as f64;
        let std = var.sqrt();
        if std <= 0.0 {
            continue;
        }
        for a in 0..n_assets {
            let v = values[(t, a)];
            if !v.is_nan() {
                out[(t, a)] = (v - mean) / std;
            }
        }
    }
    out
}

/// Build the Mega signal for the span covered by `returns` (and every
/// member's values, which must share that shape).
///
/// `members` are (node id, factor values) pairs, typically the active pool
/// in id order.
pub fn mega_factor(
    members: &[(NodeId, ArrayView2<f64>)],
    returns: ArrayView2<f64>,
    cfg: &IntegratorConfig,
) -> Result<MegaOutcome, IntegratorError> {
    if cfg.window < 5 {
        return Err(IntegratorError::WindowTooShort(cfg.window));
    }
    if cfg.rebalance_every < 1 {
        return Err(IntegratorError::BadRebalance);
    }
    let (t_max, n_assets) = returns.dim();
    let mut values = Array2::from_elem((t_max, n_assets), f64::NAN);
    let mut history = Vec::new();

    // daily correlation series and z-scores per member, computed once
    let mut daily: Vec<Vec<f64>> = Vec::with_capacity(members.len());
    let mut zscores: Vec<Array2<f64>> = Vec::with_capacity(members.len());
    for (_, m) in members {
        daily.push(daily_cs_corr(*m, returns, CorrMethod::Pearson, cfg.min_assets)?);
        zscores.push(zscore_rows(*m));
    }

    let mut rebalance = 0;
    while rebalance < t_max {
        let span_end = (rebalance + cfg.rebalance_every).min(t_max);
        if rebalance >= cfg.window {
            let lo = rebalance - cfg.window;
            let mut weights = Vec::new();
            for (k, (id, _)) in members.iter().enumerate() {
                let window_vals: Vec<f64> = daily[k][lo..rebalance]
                    .iter()
                    .copied()
                    .filter(|v| !v.is_nan())
                    .collect();
                if window_vals.is_empty() {
                    continue;
                }
                let trailing = window_vals.iter().sum::<f64>() / window_vals.len() as f64;
                if trailing.abs() >= cfg.threshold {
                    weights.push(MegaWeight {
                        factor_id: *id,
                        trailing_ic: trailing,
                        weight: trailing, // normalized below
                    });
                }
            }
            let norm: f64 = weights.iter().map(|w| w.weight.abs()).sum();
            if norm > 0.0 {
                for w in &mut weights {
                    w.weight /= norm;
                }
                let member_index: Vec<usize> = weights
                    .iter()
                    .map(|w| {
                        members
                            .iter()
                            .position(|(id, _)| *id == w.factor_id)
                            .expect("weight ids come from members")
                    })
                    .collect();
                for t in rebalance..span_end {
                    for a in 0..n_assets {
                        let mut acc = 0.0;
                        let mut ok = true;
                        for (w, k) in weights.iter().zip(&member_index) {
                            let z = zscores[*k][(t, a)];
                            if z.is_nan() {
                                ok = false;
                                break;
                            }
                            acc += w.weight * z;
                        }
                        if ok {
                            values[(t, a)] = acc;
                        }
                    }
                }
                history.push(RebalanceRecord {
                    row: rebalance,
                    weights,
                });
            }
        }
        rebalance = span_end;
    }
    Ok(MegaOutcome { values, history })
}

/// Export the weights history as `rebalance_date,factor_id,trailing_ic,weight`;
/// `dates` are the rows of the span the composite was built over.
pub fn write_weights_csv(
    outcome: &MegaOutcome,
    dates: &[chrono::NaiveDate],
    mut w: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "rebalance_date,factor_id,trailing_ic,weight")?;
    for rec in &outcome.history {
        let when = dates
            .get(rec.row)
            .map_or_else(|| rec.row.to_string(), ToString::to_string);
        for mw in &rec.weights {
            writeln!(
                w,
                "{},{},{},{}",
                when, mw.factor_id, mw.trailing_ic, mw.weight
            )?;
        }
    }
    Ok(())
}
