//! Market panel data: date × asset matrices for the six base features, plus
//! forward returns.
//!
//! Input is long-form CSV with the exact header
//! `date,asset,open,high,low,close,vwap,volume`; empty fields are missing
//! values and become NaN. The panel is immutable after construction and safe
//! to share across evaluation workers.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::expr::Feature;
use crate::util::sha256_hex;

pub const CSV_HEADER: [&str; 8] = [
    "date", "asset", "open", "high", "low", "close", "vwap", "volume",
];

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("csv read error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected 'date,asset,open,high,low,close,vwap,volume', found '{found}'")]
    BadHeader { found: String },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: duplicate (date, asset) pair ({date}, {asset})")]
    DuplicateKey {
        row: usize,
        date: NaiveDate,
        asset: String,
    },
    #[error("panel validation failed at {n} cell(s), e.g. {first}", n = cells.len(), first = &cells[0])]
    Validation { cells: Vec<String> },
    #[error("{0}")]
    Invariant(String),
    #[error("horizon {horizon} must be smaller than the number of dates ({dates})")]
    InvalidHorizon { horizon: usize, dates: usize },
}

/// What to do with rows whose present OHLC cells are inconsistent
/// (low > min(open, close), high < max(open, close), or volume < 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OhlcPolicy {
    /// Fail the load, listing offending cells.
    #[default]
    Reject,
    /// Blank the offending cells to NaN and continue.
    MaskToNan,
}

/// Immutable date × asset panel of the six base market features.
#[derive(Debug, Clone)]
pub struct Panel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    open: Array2<f64>,
    high: Array2<f64>,
    low: Array2<f64>,
    close: Array2<f64>,
    vwap: Array2<f64>,
    volume: Array2<f64>,
}

/// Forward returns derived from the panel's close prices.
#[derive(Debug, Clone)]
pub struct ReturnMatrix {
    pub values: Array2<f64>,
    pub horizon: usize,
}

/// A factor's evaluated values; same shape as the panel with NaN warmup.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    pub values: Array2<f64>,
}

impl Panel {
    /// Build a panel from pre-assembled parts, checking the invariants
    /// (strictly increasing dates, unique assets, consistent shapes, and the
    /// OHLC ordering wherever all four prices are present).
    #[allow(clippy::too_many_arguments)] // six feature matrices plus axes
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        open: Array2<f64>,
        high: Array2<f64>,
        low: Array2<f64>,
        close: Array2<f64>,
        vwap: Array2<f64>,
        volume: Array2<f64>,
    ) -> Result<Panel, PanelError> {
        let shape = (dates.len(), assets.len());
        for (name, m) in [
            ("open", &open),
            ("high", &high),
            ("low", &low),
            ("close", &close),
            ("vwap", &vwap),
            ("volume", &volume),
        ] {
            if m.dim() != shape {
                return Err(PanelError::Invariant(format!(
                    "{name} matrix has shape {:?}, expected {shape:?}",
                    m.dim()
                )));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Invariant(
                "dates must be strictly increasing".to_string(),
            ));
        }
        let mut sorted = assets.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != assets.len() {
            return Err(PanelError::Invariant("duplicate asset ids".to_string()));
        }
        let mut panel = Panel {
            dates,
            assets,
            open,
            high,
            low,
            close,
            vwap,
            volume,
        };
        let bad = panel.consistency_violations();
        if !bad.is_empty() {
            panel.describe_and_fail(bad, OhlcPolicy::Reject)?;
        }
        Ok(panel)
    }

    fn consistency_violations(&self) -> Vec<(usize, usize, String)> {
        let mut bad = Vec::new();
        for t in 0..self.dates.len() {
            for a in 0..self.assets.len() {
                let (o, h, l, c) = (
                    self.open[(t, a)],
                    self.high[(t, a)],
                    self.low[(t, a)],
                    self.close[(t, a)],
                );
                let all_present =
                    o.is_finite() && h.is_finite() && l.is_finite() && c.is_finite();
                if all_present && (l > o.min(c) || h < o.max(c)) {
                    bad.push((t, a, format!("o={o} h={h} l={l} c={c}")));
                }
                let v = self.volume[(t, a)];
                if v.is_finite() && v < 0.0 {
                    bad.push((t, a, format!("volume={v}")));
                }
            }
        }
        bad
    }

    fn describe_and_fail(
        &mut self,
        bad: Vec<(usize, usize, String)>,
        policy: OhlcPolicy,
    ) -> Result<(), PanelError> {
        match policy {
            OhlcPolicy::Reject => {
                let cells = bad
                    .iter()
                    .map(|(t, a, what)| {
                        format!("({}, {}): {what}", self.dates[*t], self.assets[*a])
                    })
                    .collect();
                Err(PanelError::Validation { cells })
            }
            OhlcPolicy::MaskToNan => {
                for (t, a, what) in bad {
                    if what.starts_with("volume") {
                        self.volume[(t, a)] = f64::NAN;
                    } else {
                        self.open[(t, a)] = f64::NAN;
                        self.high[(t, a)] = f64::NAN;
                        self.low[(t, a)] = f64::NAN;
                        self.close[(t, a)] = f64::NAN;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn feature(&self, f: Feature) -> &Array2<f64> {
        match f {
            Feature::Open => &self.open,
            Feature::High => &self.high,
            Feature::Low => &self.low,
            Feature::Close => &self.close,
            Feature::Vwap => &self.vwap,
            Feature::Volume => &self.volume,
        }
    }

    pub fn close(&self) -> &Array2<f64> {
        &self.close
    }

    /// Row range covering dates in `[start, end]` (inclusive on both ends).
    pub fn row_range(&self, start: NaiveDate, end: NaiveDate) -> std::ops::Range<usize> {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        lo..hi
    }

    /// Content hash of dates, assets, and all six matrices. Stored in mining
    /// checkpoints to refuse resuming against a different dataset.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for d in &self.dates {
            bytes.extend_from_slice(d.to_string().as_bytes());
            bytes.push(b'\n');
        }
        for a in &self.assets {
            bytes.extend_from_slice(a.as_bytes());
            bytes.push(b'\n');
        }
        const CANON_NAN: u64 = 0x7ff8_0000_0000_0000;
        for m in [
            &self.open,
            &self.high,
            &self.low,
            &self.close,
            &self.vwap,
            &self.volume,
        ] {
            for v in m.iter() {
                let bits = if v.is_nan() { CANON_NAN } else { v.to_bits() };
                bytes.extend_from_slice(&bits.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

fn parse_cell(raw: &str, field: &str, row: usize) -> Result<f64, PanelError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(f64::NAN);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(PanelError::Parse {
            row,
            message: format!("malformed {field} value '{raw}'"),
        }),
    }
}

/// Load a panel from long-form CSV. Missing (date, asset) combinations become
/// NaN cells; `policy` decides what happens to inconsistent OHLC rows.
pub fn load_panel(reader: impl Read, policy: OhlcPolicy) -> Result<Panel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_HEADER {
        return Err(PanelError::BadHeader {
            found: found.join(","),
        });
    }

    // (date, asset) -> [open, high, low, close, vwap, volume]
    let mut cells: BTreeMap<(NaiveDate, String), [f64; 6]> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec?;
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| {
            PanelError::Parse {
                row,
                message: format!("malformed date '{}'", &rec[0]),
            }
        })?;
        let asset = rec[1].trim().to_string();
        if asset.is_empty() {
            return Err(PanelError::Parse {
                row,
                message: "empty asset id".to_string(),
            });
        }
        let mut vals = [f64::NAN; 6];
        for (j, field) in ["open", "high", "low", "close", "vwap", "volume"]
            .iter()
            .enumerate()
        {
            vals[j] = parse_cell(&rec[j + 2], field, row)?;
        }
        if cells.insert((date, asset.clone()), vals).is_some() {
            return Err(PanelError::DuplicateKey { row, date, asset });
        }
    }

    let mut dates: Vec<NaiveDate> = cells.keys().map(|(d, _)| *d).collect();
    dates.dedup();
    let mut assets: Vec<String> = cells.keys().map(|(_, a)| a.clone()).collect();
    assets.sort();
    assets.dedup();

    let shape = (dates.len(), assets.len());
    let mut mats = [
        Array2::from_elem(shape, f64::NAN),
        Array2::from_elem(shape, f64::NAN),
        Array2::from_elem(shape, f64::NAN),
        Array2::from_elem(shape, f64::NAN),
        Array2::from_elem(shape, f64::NAN),
        Array2::from_elem(shape, f64::NAN),
    ];
    let date_idx: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let asset_idx: BTreeMap<&str, usize> = assets
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    for ((date, asset), vals) in &cells {
        let t = date_idx[date];
        let a = asset_idx[asset.as_str()];
        for j in 0..6 {
            mats[j][(t, a)] = vals[j];
        }
    }
    let [open, high, low, close, vwap, volume] = mats;

    let mut panel = Panel {
        dates,
        assets,
        open,
        high,
        low,
        close,
        vwap,
        volume,
    };
    let bad = panel.consistency_violations();
    if !bad.is_empty() {
        panel.describe_and_fail(bad, policy)?;
    }
    Ok(panel)
}

/// Forward close-to-close returns over `horizon` trading days:
/// `close(t+h)/close(t) - 1`, NaN wherever either close is missing or the
/// base close is zero. The last `horizon` rows are NaN.
pub fn forward_returns(panel: &Panel, horizon: usize) -> Result<ReturnMatrix, PanelError> {
    let t_max = panel.n_dates();
    if horizon == 0 || horizon >= t_max {
        return Err(PanelError::InvalidHorizon {
            horizon,
            dates: t_max,
        });
    }
    let close = panel.close();
    let mut values = Array2::from_elem((t_max, panel.n_assets()), f64::NAN);
    for t in 0..t_max - horizon {
        for a in 0..panel.n_assets() {
            let c0 = close[(t, a)];
            let c1 = close[(t + horizon, a)];
            if c0.is_finite() && c1.is_finite() && c0 != 0.0 {
                values[(t, a)] = c1 / c0 - 1.0;
            }
        }
    }
    Ok(ReturnMatrix { values, horizon })
}

/// Write factor values in the long `date,asset,value` form; NaN cells are
/// written as empty fields, mirroring the input convention.
pub fn write_factor_csv(
    panel: &Panel,
    values: ArrayView2<f64>,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "date,asset,value")?;
    for (t, date) in panel.dates().iter().enumerate() {
        for (a, asset) in panel.assets().iter().enumerate() {
            let v = values[(t, a)];
            if v.is_nan() {
                writeln!(w, "{date},{asset},")?;
            } else {
                writeln!(w, "{date},{asset},{v}")?;
            }
        }
    }
    Ok(())
}
