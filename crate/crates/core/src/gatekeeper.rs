//! Admission rule for evaluated candidates.
//!
//! A candidate enters the active pool when its quality clears the bar and it
//! either improves on its parent or is weakly correlated with the pool:
//! `(q > τ_q ∧ gain > 0) ∨ (q > τ_q ∧ max|corr| < τ_d)`, strict inequalities.
//! Gain is the percentage improvement over the parent, guarded against
//! near-zero parent quality. The decision is a pure function of its scalar
//! inputs; within one batch, candidates are applied in descending quality so
//! that later novelty checks see earlier admits.

use serde::Serialize;

use crate::QUALITY_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionBranch {
    Improvement,
    Novelty,
    None,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdmissionDecision {
    pub admitted: bool,
    pub branch: AdmissionBranch,
    pub quality: f64,
    pub gain: f64,
    /// Max |Pearson correlation| against the active pool; 0 for an empty pool.
    pub max_abs_pool_corr: f64,
}

/// Evaluate the admission rule. A NaN `max_abs_pool_corr` (empty pool, or no
/// comparable days) is treated as 0, i.e. maximal novelty.
pub fn admit(
    candidate_quality: f64,
    parent_quality: f64,
    max_abs_pool_corr: f64,
    tau_q: f64,
    tau_d: f64,
) -> AdmissionDecision {
    let corr = if max_abs_pool_corr.is_nan() {
        0.0
    } else {
        max_abs_pool_corr
    };
    let gain = (candidate_quality - parent_quality) / parent_quality.max(QUALITY_EPS);
    let clears_bar = candidate_quality > tau_q;
    let branch = if clears_bar && gain > 0.0 {
        AdmissionBranch::Improvement
    } else if clears_bar && corr < tau_d {
        AdmissionBranch::Novelty
    } else {
        AdmissionBranch::None
    };
    AdmissionDecision {
        admitted: branch != AdmissionBranch::None,
        branch,
        quality: candidate_quality,
        gain,
        max_abs_pool_corr: corr,
    }
}
