//! Closed-loop mining of formulaic alpha factors.
//!
//! The crate is organized around a factor DAG: every factor is a node holding
//! an expression in a small typed DSL, a natural-language explanation, and a
//! quality score (|ICIR| on the training period). Each mining iteration
//! selects parent factors with a Bayesian prior × likelihood score
//! ([`retriever`]), asks a chat-completion provider for modification
//! strategies and concrete child expressions ([`generator`]), screens the
//! candidates syntactically ([`expr::lint`]), evaluates them over the market
//! panel ([`engine`]), and admits survivors to the pool through a
//! quality/novelty gate ([`gatekeeper`]). The active pool is periodically
//! folded into a composite signal ([`integrator`]) that feeds the
//! top-quantile trading simulation in [`backtest`].
//!
//! [`orchestrator`] wires the loop together and backs the `alphamine` CLI.

pub mod backtest;
pub mod engine;
pub mod expr;
pub mod gatekeeper;
pub mod generator;
pub mod graph;
pub mod integrator;
pub mod metrics;
pub mod orchestrator;
pub mod panel;
pub mod providers;
pub mod retriever;
pub(crate) mod stats;
pub mod util;

/// Guard used when normalizing by a quality value that can be arbitrarily
/// close to zero (percentage-gain and admission-gain denominators).
pub const QUALITY_EPS: f64 = 1e-6;
