//! Lint rules for generator-produced candidate expressions.
//!
//! Error-level rules gate admission: total node count against the length
//! threshold, float constants against the whitelist, and integer constants
//! outside window slots. The dimensional rules are heuristic and only ever
//! warn; an expression is "clean" when it has no error-level violations.

use super::{BinaryOp, Expr, Feature, RollingBinOp, RollingOp, UnaryOp};

/// Float constants allowed in arithmetic positions. The generation prompts
/// whitelist `0.0001 0.01, 0.0, 1.0, 2.0` and their own worked example uses
/// `0.001`, so that value is accepted as well.
pub const DEFAULT_FLOAT_WHITELIST: [f64; 6] = [0.0, 0.0001, 0.001, 0.01, 1.0, 2.0];

#[derive(Debug, Clone)]
pub struct LintOptions {
    /// Maximum total node count.
    pub max_len: usize,
    pub float_whitelist: Vec<f64>,
    /// Enable the warning-only dimensional analysis.
    pub dimensional: bool,
}

impl Default for LintOptions {
    fn default() -> Self {
        Self {
            max_len: 40,
            float_whitelist: DEFAULT_FLOAT_WHITELIST.to_vec(),
            dimensional: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LintCode {
    ExpressionTooLong,
    FloatNotWhitelisted,
    IntInArithmetic,
    DimensionMismatch,
    NotDimensionless,
}

#[derive(Debug, Clone)]
pub struct LintViolation {
    pub code: LintCode,
    pub severity: Severity,
    pub message: String,
    /// Dotted child-index path from the root; empty string for the root.
    pub path: String,
}

#[derive(Debug, Clone, Default)]
pub struct LintReport {
    pub violations: Vec<LintViolation>,
}

impl LintReport {
    pub fn errors(&self) -> impl Iterator<Item = &LintViolation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }

    /// No error-level violations (warnings allowed).
    pub fn is_clean(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: LintCode, severity: Severity, path: &[usize], message: String) {
        let path = path
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(".");
        self.violations.push(LintViolation {
            code,
            severity,
            message,
            path,
        });
    }
}

/// Dimension vector (price exponent, volume exponent).
type Dim = (i32, i32);

const DIMLESS: Dim = (0, 0);

fn feature_dim(f: Feature) -> Dim {
    match f {
        Feature::Volume => (0, 1),
        _ => (1, 0),
    }
}

pub fn lint(expr: &Expr, opts: &LintOptions) -> LintReport {
    let mut report = LintReport::default();

    let count = expr.node_count();
    if count > opts.max_len {
        report.push(
            LintCode::ExpressionTooLong,
            Severity::Error,
            &[],
            format!("expression has {count} nodes, limit is {}", opts.max_len),
        );
    }

    let mut path = Vec::new();
    check_constants(expr, opts, &mut path, &mut report);

    if opts.dimensional {
        let root_dim = dim_of(expr, &mut path, &mut report);
        if root_dim != DIMLESS {
            report.push(
                LintCode::NotDimensionless,
                Severity::Warning,
                &[],
                format!(
                    "expression has dimension price^{} * volume^{}",
                    root_dim.0, root_dim.1
                ),
            );
        }
    }

    report
}

fn check_constants(
    expr: &Expr,
    opts: &LintOptions,
    path: &mut Vec<usize>,
    report: &mut LintReport,
) {
    match expr {
        Expr::Feature(_) => {}
        Expr::IntConst(v) => {
            // Window slots are not Expr nodes, so any IntConst in the tree
            // sits in an arithmetic position.
            report.push(
                LintCode::IntInArithmetic,
                Severity::Error,
                path,
                format!("integer constant {v} in arithmetic position (use {v}.0)"),
            );
        }
        Expr::FloatConst(v) => {
            if !opts.float_whitelist.iter().any(|w| w == v) {
                report.push(
                    LintCode::FloatNotWhitelisted,
                    Severity::Error,
                    path,
                    format!("float constant {v} is not in the whitelist"),
                );
            }
        }
        Expr::Unary(_, c) | Expr::Rolling(_, c, _) => {
            path.push(0);
            check_constants(c, opts, path, report);
            path.pop();
        }
        Expr::Binary(_, l, r) | Expr::RollingBin(_, l, r, _) => {
            path.push(0);
            check_constants(l, opts, path, report);
            path.pop();
            path.push(1);
            check_constants(r, opts, path, report);
            path.pop();
        }
    }
}

fn warn_dim(report: &mut LintReport, path: &[usize], message: String) {
    report.push(LintCode::DimensionMismatch, Severity::Warning, path, message);
}

fn dim_of(expr: &Expr, path: &mut Vec<usize>, report: &mut LintReport) -> Dim {
    match expr {
        Expr::Feature(f) => feature_dim(*f),
        Expr::IntConst(_) | Expr::FloatConst(_) => DIMLESS,
        Expr::Unary(op, c) => {
            path.push(0);
            let d = dim_of(c, path, report);
            path.pop();
            match op {
                UnaryOp::Rank | UnaryOp::Sign => DIMLESS,
                UnaryOp::Log | UnaryOp::SLog1p => {
                    if d != DIMLESS {
                        warn_dim(report, path, format!("{} expects a dimensionless input", op.name()));
                    }
                    DIMLESS
                }
                UnaryOp::Inv => (-d.0, -d.1),
                UnaryOp::Abs => d,
            }
        }
        Expr::Binary(op, l, r) => {
            path.push(0);
            let dl = dim_of(l, path, report);
            path.pop();
            path.push(1);
            let dr = dim_of(r, path, report);
            path.pop();
            match op {
                BinaryOp::Mul => (dl.0 + dr.0, dl.1 + dr.1),
                BinaryOp::Div => (dl.0 - dr.0, dl.1 - dr.1),
                BinaryOp::Pow => {
                    if dl != DIMLESS {
                        warn_dim(report, path, "Pow expects a dimensionless base".to_string());
                    }
                    DIMLESS
                }
                BinaryOp::Add | BinaryOp::Sub | BinaryOp::GetGreater | BinaryOp::GetLess => {
                    if dl != dr {
                        warn_dim(
                            report,
                            path,
                            format!("{} operands have different dimensions", op.name()),
                        );
                    }
                    dl
                }
                BinaryOp::Greater | BinaryOp::Less => {
                    if dl != dr {
                        warn_dim(
                            report,
                            path,
                            format!("{} operands have different dimensions", op.name()),
                        );
                    }
                    DIMLESS
                }
            }
        }
        Expr::Rolling(op, c, _) => {
            path.push(0);
            let d = dim_of(c, path, report);
            path.pop();
            match op {
                RollingOp::TsRank
                | RollingOp::TsIr
                | RollingOp::TsPctChange
                | RollingOp::TsRatio
                | RollingOp::TsSkew
                | RollingOp::TsKurt => DIMLESS,
                RollingOp::TsVar => (2 * d.0, 2 * d.1),
                _ => d,
            }
        }
        Expr::RollingBin(op, l, r, _) => {
            path.push(0);
            let dl = dim_of(l, path, report);
            path.pop();
            path.push(1);
            let dr = dim_of(r, path, report);
            path.pop();
            match op {
                RollingBinOp::TsCorr => DIMLESS,
                RollingBinOp::TsCov => (dl.0 + dr.0, dl.1 + dr.1),
            }
        }
    }
}
