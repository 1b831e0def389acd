//! Bayesian scoring of active factors and global top-k parent selection.
//!
//! Each active factor is scored `prior × likelihood`. The prior rewards
//! pool-normalized quality and discounts depth and repeated retrieval:
//! `σ(z) · (1-γ)^depth · (1-ω)^k`. The likelihood estimates how much a new
//! descendant would add to the pool: for leaf factors (no admitted children)
//! a product of value, semantic, and syntactic diversity against the active
//! pool; for non-leaf factors the average percentage quality gain of their
//! children times two sparsity terms (children vs parent, children vs each
//! other).
//!
//! Scoring is pure over a graph snapshot plus caches of training-slice factor
//! values and explanation embeddings; only the retrieval-count bump mutates
//! the graph, applied after selection.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::Serialize;
use thiserror::Error;

use crate::expr::syntactic_distance;
use crate::graph::{FactorGraph, FactorNode, NodeId};
use crate::metrics::factor_corr;
use crate::stats::sigmoid;
use crate::QUALITY_EPS;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("gamma and omega must lie in [0, 1); got gamma={gamma}, omega={omega}")]
    BadPenalty { gamma: f64, omega: f64 },
    #[error("no active factors to score")]
    EmptyPool,
    #[error("missing cached factor values for node {0}")]
    MissingValues(NodeId),
    #[error("missing explanation embedding for node {0}")]
    MissingEmbedding(NodeId),
}

/// Inputs the scorer needs beyond the graph itself: training-slice factor
/// values for every node ever admitted, and embeddings for the active pool.
pub struct ScoreContext<'a> {
    pub values: BTreeMap<NodeId, ArrayView2<'a, f64>>,
    pub embeddings: &'a BTreeMap<NodeId, Vec<f64>>,
    pub min_assets: usize,
}

impl<'a> ScoreContext<'a> {
    fn values_of(&self, id: NodeId) -> Result<&ArrayView2<'a, f64>, RetrieverError> {
        self.values.get(&id).ok_or(RetrieverError::MissingValues(id))
    }

    fn embedding_of(&self, id: NodeId) -> Result<&Vec<f64>, RetrieverError> {
        self.embeddings
            .get(&id)
            .ok_or(RetrieverError::MissingEmbedding(id))
    }
}

/// Mean and standard deviation (population) of quality over the active pool.
#[derive(Debug, Clone, Copy)]
pub struct PoolStats {
    pub mean: f64,
    pub std: f64,
}

pub fn pool_quality_stats(graph: &FactorGraph) -> PoolStats {
    let qs: Vec<f64> = graph.active_nodes().map(|n| n.quality).collect();
    if qs.is_empty() {
        return PoolStats { mean: 0.0, std: 0.0 };
    }
    let mean = qs.iter().sum::<f64>() / qs.len() as f64;
    let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / qs.len() as f64;
    PoolStats {
        mean,
        std: var.sqrt(),
    }
}

/// Prior score: `σ((q - μ)/ς) · (1-γ)^depth · (1-ω)^k`, with the z-score
/// defined as 0 when the pool quality dispersion is zero.
pub fn prior(
    quality: f64,
    depth: u32,
    retrievals: u32,
    stats: PoolStats,
    gamma: f64,
    omega: f64,
) -> Result<f64, RetrieverError> {
    if !(0.0..1.0).contains(&gamma) || !(0.0..1.0).contains(&omega) {
        return Err(RetrieverError::BadPenalty { gamma, omega });
    }
    let z = if stats.std > 0.0 {
        (quality - stats.mean) / stats.std
    } else {
        0.0
    };
    Ok(sigmoid(z) * (1.0 - gamma).powi(depth as i32) * (1.0 - omega).powi(retrievals as i32))
}

/// Likelihood components; the product recomposes the likelihood exactly.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodParts {
    Leaf {
        val_div: f64,
        sem_div: f64,
        syn_div: f64,
    },
    NonLeaf {
        pg_mean: f64,
        spar_pc: f64,
        spar_cc: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalScore {
    pub node_id: NodeId,
    pub is_leaf: bool,
    pub prior: f64,
    pub likelihood: f64,
    pub total: f64,
    pub quality_z: f64,
    pub depth_penalty: f64,
    pub retrieval_penalty: f64,
    #[serde(flatten)]
    pub parts: LikelihoodParts,
}

fn mean_or(values: impl Iterator<Item = f64>, empty: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        empty
    } else {
        sum / n as f64
    }
}

/// Correlations that cannot be computed (no overlapping valid days) carry no
/// redundancy evidence and enter the averages as 0.
fn corr_or_zero(a: &ArrayView2<f64>, b: &ArrayView2<f64>, min_assets: usize) -> f64 {
    let c = factor_corr(a.view(), b.view(), min_assets);
    if c.is_nan() {
        0.0
    } else {
        c
    }
}

/// Diversity-based likelihood for a factor with no admitted children,
/// measured against the rest of the active pool. An empty comparison pool
/// yields 1 (vacuous product).
pub fn leaf_likelihood(
    node: &FactorNode,
    pool: &[&FactorNode],
    ctx: &ScoreContext,
) -> Result<(f64, LikelihoodParts), RetrieverError> {
    if pool.is_empty() {
        let parts = LikelihoodParts::Leaf {
            val_div: 1.0,
            sem_div: 1.0,
            syn_div: 1.0,
        };
        return Ok((1.0, parts));
    }
    let own_values = ctx.values_of(node.id)?;
    let own_embedding = ctx.embedding_of(node.id)?;

    let mut corr_sum = 0.0;
    let mut cos_sum = 0.0;
    let mut syn_sum = 0.0;
    for other in pool {
        corr_sum += corr_or_zero(own_values, ctx.values_of(other.id)?, ctx.min_assets);
        let emb = ctx.embedding_of(other.id)?;
        cos_sum += dot(own_embedding, emb);
        syn_sum += syntactic_distance(&node.expr, &other.expr);
    }
    let n = pool.len() as f64;
    let val_div = (1.0 - (corr_sum / n).abs()).clamp(0.0, 1.0);
    let sem_div = sigmoid(1.0 - cos_sum / n);
    let syn_div = syn_sum / n;
    let parts = LikelihoodParts::Leaf {
        val_div,
        sem_div,
        syn_div,
    };
    Ok((val_div * sem_div * syn_div, parts))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Track-record likelihood for a factor with admitted children (evicted
/// children still count): average percentage quality gain, clamped at zero,
/// times parent-child and child-child sparsity.
pub fn nonleaf_likelihood(
    node: &FactorNode,
    children: &[&FactorNode],
    ctx: &ScoreContext,
) -> Result<(f64, LikelihoodParts), RetrieverError> {
    debug_assert!(!children.is_empty());
    let pg_mean = mean_or(
        children
            .iter()
            .map(|c| (c.quality - node.quality) / node.quality.max(QUALITY_EPS)),
        0.0,
    )
    .max(0.0);

    let own_values = ctx.values_of(node.id)?;
    let spar_pc = (1.0
        - mean_or(
            children
                .iter()
                .map(|c| {
                    ctx.values_of(c.id)
                        .map(|v| corr_or_zero(own_values, v, ctx.min_assets))
                })
                .collect::<Result<Vec<f64>, _>>()?
                .into_iter(),
            0.0,
        ))
    .clamp(0.0, 2.0);

    let spar_cc = if children.len() == 1 {
        1.0
    } else {
        let mut pair_corrs = Vec::new();
        for i in 0..children.len() {
            for j in i + 1..children.len() {
                pair_corrs.push(corr_or_zero(
                    ctx.values_of(children[i].id)?,
                    ctx.values_of(children[j].id)?,
                    ctx.min_assets,
                ));
            }
        }
        (1.0 - mean_or(pair_corrs.into_iter(), 0.0)).clamp(0.0, 2.0)
    };

    let parts = LikelihoodParts::NonLeaf {
        pg_mean,
        spar_pc,
        spar_cc,
    };
    Ok((pg_mean * spar_pc * spar_cc, parts))
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Top-k scores in selection order.
    pub selected: Vec<RetrievalScore>,
    /// Every active node's score, in node-id order (for score dumps).
    pub scored: Vec<RetrievalScore>,
}

/// Score every active node, select the global top `k` (ties: higher quality,
/// then smaller id), and bump the retrieval count of each selected node.
pub fn select_parents(
    graph: &mut FactorGraph,
    k: usize,
    gamma: f64,
    omega: f64,
    ctx: &ScoreContext,
) -> Result<Selection, RetrieverError> {
    if graph.active_count() == 0 {
        return Err(RetrieverError::EmptyPool);
    }
    let stats = pool_quality_stats(graph);
    let active: Vec<&FactorNode> = graph.active_nodes().collect();

    let mut scored = Vec::with_capacity(active.len());
    for node in &active {
        let pool: Vec<&FactorNode> = active
            .iter()
            .copied()
            .filter(|other| other.id != node.id)
            .collect();
        let children: Vec<&FactorNode> = graph
            .children_of(node.id)
            .iter()
            .map(|id| graph.node(*id).expect("child exists"))
            .collect();
        let is_leaf = children.is_empty();
        let p = prior(node.quality, node.depth, node.retrievals, stats, gamma, omega)?;
        let (likelihood, parts) = if is_leaf {
            leaf_likelihood(node, &pool, ctx)?
        } else {
            nonleaf_likelihood(node, &children, ctx)?
        };
        let quality_z = if stats.std > 0.0 {
            (node.quality - stats.mean) / stats.std
        } else {
            0.0
        };
        scored.push(RetrievalScore {
            node_id: node.id,
            is_leaf,
            prior: p,
            likelihood,
            total: p * likelihood,
            quality_z,
            depth_penalty: (1.0 - gamma).powi(node.depth as i32),
            retrieval_penalty: (1.0 - omega).powi(node.retrievals as i32),
            parts,
        });
    }

    let mut ranked = scored.clone();
    let quality_of = |id: NodeId| graph.node(id).map(|n| n.quality).unwrap_or(0.0);
    ranked.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then_with(|| quality_of(b.node_id).total_cmp(&quality_of(a.node_id)))
            .then(a.node_id.cmp(&b.node_id))
    });
    ranked.truncate(k.min(scored.len()));
    for s in &ranked {
        graph.increment_retrievals(s.node_id).expect("selected node exists");
    }
    Ok(Selection {
        selected: ranked,
        scored,
    })
}
