//! The alpha expression DSL: a typed AST over six base market features,
//! integer window constants, float constants, and the operator vocabulary
//! implemented by [`crate::engine`].
//!
//! Expressions round-trip through [`parse`] and [`Expr::render`]; the
//! canonical rendering (`Op(arg1, arg2)`, one space after commas) is also the
//! persistence format used by the graph store.

mod lint;
mod parser;

pub use lint::{
    lint, LintCode, LintOptions, LintReport, LintViolation, Severity, DEFAULT_FLOAT_WHITELIST,
};
pub use parser::{parse, ParseError};

/// Base market features addressable as `$name` in expression text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Open,
    High,
    Low,
    Close,
    Vwap,
    Volume,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::High,
        Feature::Low,
        Feature::Close,
        Feature::Vwap,
        Feature::Volume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Close => "close",
            Feature::Vwap => "vwap",
            Feature::Volume => "volume",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Feature::Open => "$open",
            Feature::High => "$high",
            Feature::Low => "$low",
            Feature::Close => "$close",
            Feature::Vwap => "$vwap",
            Feature::Volume => "$volume",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Elementwise and cross-sectional unary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Abs,
    Sign,
    Log,
    SLog1p,
    Inv,
    /// Cross-sectional rank within each date, mapped to [0, 1].
    Rank,
}

/// Elementwise binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// Exponent must be a constant; enforced at parse time.
    Pow,
    Greater,
    Less,
    GetGreater,
    GetLess,
}

/// Rolling operators over one input series plus a window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RollingOp {
    Ref,
    TsMean,
    TsSum,
    TsStd,
    TsVar,
    TsMin,
    TsMax,
    TsMed,
    TsMad,
    TsMinMaxDiff,
    TsMaxDiff,
    TsMinDiff,
    TsIr,
    TsSkew,
    TsKurt,
    TsRank,
    TsDelta,
    TsRatio,
    TsPctChange,
    TsWMA,
    TsEMA,
}

/// Rolling operators over two input series plus a window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RollingBinOp {
    TsCov,
    TsCorr,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Abs => "Abs",
            UnaryOp::Sign => "Sign",
            UnaryOp::Log => "Log",
            UnaryOp::SLog1p => "SLog1p",
            UnaryOp::Inv => "Inv",
            UnaryOp::Rank => "Rank",
        }
    }
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "Add",
            BinaryOp::Sub => "Sub",
            BinaryOp::Mul => "Mul",
            BinaryOp::Div => "Div",
            BinaryOp::Pow => "Pow",
            BinaryOp::Greater => "Greater",
            BinaryOp::Less => "Less",
            BinaryOp::GetGreater => "GetGreater",
            BinaryOp::GetLess => "GetLess",
        }
    }
}

impl RollingOp {
    pub fn name(self) -> &'static str {
        match self {
            RollingOp::Ref => "Ref",
            RollingOp::TsMean => "TsMean",
            RollingOp::TsSum => "TsSum",
            RollingOp::TsStd => "TsStd",
            RollingOp::TsVar => "TsVar",
            RollingOp::TsMin => "TsMin",
            RollingOp::TsMax => "TsMax",
            RollingOp::TsMed => "TsMed",
            RollingOp::TsMad => "TsMad",
            RollingOp::TsMinMaxDiff => "TsMinMaxDiff",
            RollingOp::TsMaxDiff => "TsMaxDiff",
            RollingOp::TsMinDiff => "TsMinDiff",
            RollingOp::TsIr => "TsIr",
            RollingOp::TsSkew => "TsSkew",
            RollingOp::TsKurt => "TsKurt",
            RollingOp::TsRank => "TsRank",
            RollingOp::TsDelta => "TsDelta",
            RollingOp::TsRatio => "TsRatio",
            RollingOp::TsPctChange => "TsPctChange",
            RollingOp::TsWMA => "TsWMA",
            RollingOp::TsEMA => "TsEMA",
        }
    }
}

impl RollingBinOp {
    pub fn name(self) -> &'static str {
        match self {
            RollingBinOp::TsCov => "TsCov",
            RollingBinOp::TsCorr => "TsCorr",
        }
    }
}

/// Operator kind resolved from a name token, including the accepted aliases
/// (`Slog1p` for `SLog1p`, `TsDiv` for `TsRatio`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OpKind {
    Unary(UnaryOp),
    Binary(BinaryOp),
    Rolling(RollingOp),
    RollingBin(RollingBinOp),
}

pub(crate) fn op_from_name(name: &str) -> Option<OpKind> {
    use BinaryOp::*;
    use RollingBinOp::*;
    use RollingOp::*;
    use UnaryOp::*;
    let kind = match name {
        "Abs" => OpKind::Unary(Abs),
        "Sign" => OpKind::Unary(Sign),
        "Log" => OpKind::Unary(Log),
        "SLog1p" | "Slog1p" => OpKind::Unary(SLog1p),
        "Inv" => OpKind::Unary(Inv),
        "Rank" => OpKind::Unary(Rank),
        "Add" => OpKind::Binary(Add),
        "Sub" => OpKind::Binary(Sub),
        "Mul" => OpKind::Binary(Mul),
        "Div" => OpKind::Binary(Div),
        "Pow" => OpKind::Binary(Pow),
        "Greater" => OpKind::Binary(Greater),
        "Less" => OpKind::Binary(Less),
        "GetGreater" => OpKind::Binary(GetGreater),
        "GetLess" => OpKind::Binary(GetLess),
        "Ref" => OpKind::Rolling(Ref),
        "TsMean" => OpKind::Rolling(TsMean),
        "TsSum" => OpKind::Rolling(TsSum),
        "TsStd" => OpKind::Rolling(TsStd),
        "TsVar" => OpKind::Rolling(TsVar),
        "TsMin" => OpKind::Rolling(TsMin),
        "TsMax" => OpKind::Rolling(TsMax),
        "TsMed" => OpKind::Rolling(TsMed),
        "TsMad" => OpKind::Rolling(TsMad),
        "TsMinMaxDiff" => OpKind::Rolling(TsMinMaxDiff),
        "TsMaxDiff" => OpKind::Rolling(TsMaxDiff),
        "TsMinDiff" => OpKind::Rolling(TsMinDiff),
        "TsIr" => OpKind::Rolling(TsIr),
        "TsSkew" => OpKind::Rolling(TsSkew),
        "TsKurt" => OpKind::Rolling(TsKurt),
        "TsRank" => OpKind::Rolling(TsRank),
        "TsDelta" => OpKind::Rolling(TsDelta),
        "TsRatio" | "TsDiv" => OpKind::Rolling(TsRatio),
        "TsPctChange" => OpKind::Rolling(TsPctChange),
        "TsWMA" => OpKind::Rolling(TsWMA),
        "TsEMA" => OpKind::Rolling(TsEMA),
        "TsCov" => OpKind::RollingBin(TsCov),
        "TsCorr" => OpKind::RollingBin(TsCorr),
        _ => return None,
    };
    Some(kind)
}

/// Abstract syntax tree of an alpha formula.
///
/// Window lengths are stored directly as integers (they are never general
/// subexpressions), but they count as nodes and tokens: `TsMean($close, 5)`
/// has three nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Feature(Feature),
    /// Integer constant, always >= 1 (windows, lags, Pow exponents).
    IntConst(u32),
    FloatConst(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Rolling(RollingOp, Box<Expr>, u32),
    RollingBin(RollingBinOp, Box<Expr>, Box<Expr>, u32),
}

/// Render a float constant so that it re-parses as a float: `1.0` keeps its
/// decimal point and small magnitudes stay in plain decimal notation.
pub fn float_literal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

impl Expr {
    /// Canonical text form: `Op(arg1, arg2)` with a single space after each
    /// comma. `parse(render(e))` is structurally identical to `e`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Expr::Feature(f) => out.push_str(f.token()),
            Expr::IntConst(v) => out.push_str(&v.to_string()),
            Expr::FloatConst(v) => out.push_str(&float_literal(*v)),
            Expr::Unary(op, c) => {
                out.push_str(op.name());
                out.push('(');
                c.render_into(out);
                out.push(')');
            }
            Expr::Binary(op, l, r) => {
                out.push_str(op.name());
                out.push('(');
                l.render_into(out);
                out.push_str(", ");
                r.render_into(out);
                out.push(')');
            }
            Expr::Rolling(op, c, d) => {
                out.push_str(op.name());
                out.push('(');
                c.render_into(out);
                out.push_str(", ");
                out.push_str(&d.to_string());
                out.push(')');
            }
            Expr::RollingBin(op, l, r, d) => {
                out.push_str(op.name());
                out.push('(');
                l.render_into(out);
                out.push_str(", ");
                r.render_into(out);
                out.push_str(", ");
                out.push_str(&d.to_string());
                out.push(')');
            }
        }
    }

    /// Total AST node count including constants and window leaves. This is
    /// the "length" checked against the length threshold.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Feature(_) | Expr::IntConst(_) | Expr::FloatConst(_) => 1,
            Expr::Unary(_, c) => 1 + c.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
            Expr::Rolling(_, c, _) => 2 + c.node_count(),
            Expr::RollingBin(_, l, r, _) => 2 + l.node_count() + r.node_count(),
        }
    }

    /// Pre-order sequence of node labels. Token count equals
    /// [`Expr::node_count`]; this sequence is what the syntactic edit
    /// distance operates on.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.node_count());
        self.tokens_into(&mut out);
        out
    }

    fn tokens_into(&self, out: &mut Vec<String>) {
        match self {
            Expr::Feature(f) => out.push(f.token().to_string()),
            Expr::IntConst(v) => out.push(v.to_string()),
            Expr::FloatConst(v) => out.push(float_literal(*v)),
            Expr::Unary(op, c) => {
                out.push(op.name().to_string());
                c.tokens_into(out);
            }
            Expr::Binary(op, l, r) => {
                out.push(op.name().to_string());
                l.tokens_into(out);
                r.tokens_into(out);
            }
            Expr::Rolling(op, c, d) => {
                out.push(op.name().to_string());
                c.tokens_into(out);
                out.push(d.to_string());
            }
            Expr::RollingBin(op, l, r, d) => {
                out.push(op.name().to_string());
                l.tokens_into(out);
                r.tokens_into(out);
                out.push(d.to_string());
            }
        }
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

/// Normalized token-level edit distance in [0, 1]: Levenshtein distance
/// between the two pre-order token sequences, divided by the sum of their
/// lengths.
pub fn syntactic_distance(a: &Expr, b: &Expr) -> f64 {
    let ta = a.tokens();
    let tb = b.tokens();
    let d = levenshtein(&ta, &tb);
    d as f64 / (ta.len() + tb.len()) as f64
}

fn levenshtein(a: &[String], b: &[String]) -> usize {
    if a == b {
        return 0;
    }
    let (m, n) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=n).collect();
    let mut cur = vec![0usize; n + 1];
    for i in 1..=m {
        cur[0] = i;
        for j in 1..=n {
            let sub_cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + sub_cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}
