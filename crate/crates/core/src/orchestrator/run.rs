//! Drives the mining loop: seed bootstrap, per-iteration select → generate →
//! screen → evaluate → admit → evict, checkpointing after every iteration,
//! and the final composite-signal evaluation per data split.
//!
//! One session owns the graph; evaluation of candidate batches fans out over
//! a worker pool, and all graph mutations and log writes stay on the driver
//! thread. Runs with the mock providers are bit-reproducible: node ids,
//! checkpoints, and reports depend only on (config, panel).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backtest::{simulate, BacktestError, BacktestSummary};
use crate::engine::evaluate;
use crate::expr::LintOptions;
use crate::gatekeeper::admit;
use crate::generator::{
    propose_strategies, screen, synthesize, CandidateFactor, GenSettings, GeneratorError,
    PromptSink,
};
use crate::graph::{FactorGraph, GraphDoc, GraphError, NodeId};
use crate::integrator::{mega_factor, write_weights_csv, IntegratorConfig, IntegratorError};
use crate::metrics::{factor_corr, ic_suite, quality, MetricReport};
use crate::panel::{forward_returns, Panel, PanelError, ReturnMatrix};
use crate::providers::http::{HttpChatClient, HttpConfig, HttpEmbeddingClient};
use crate::providers::mock::{HashEmbedder, MutatorChat};
use crate::providers::{
    ChatProvider, ChatRequest, EmbeddingProvider, LoggedChat, LoggedEmbedder, ProviderError,
};
use crate::retriever::{select_parents, RetrieverError, ScoreContext};
use crate::util::JsonlWriter;

use super::config::{MiningConfig, ProviderKind};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("seed '{expr}' has no valid cells on the training split")]
    SeedDegenerate { expr: String },
    #[error("checkpoint schema version {found} is not supported")]
    CheckpointSchema { found: u32 },
    #[error("checkpoint panel fingerprint {stored} does not match loaded panel {actual}")]
    PanelMismatch { stored: String, actual: String },
    #[error("capacity {capacity} is smaller than the checkpoint's active pool ({active})")]
    CapacityTooSmall { capacity: usize, active: usize },
}

/// Chat and embedding providers as configured for a run.
pub struct Providers {
    pub chat: Box<dyn ChatProvider>,
    pub embedder: Box<dyn EmbeddingProvider>,
}

/// Instantiate providers per the config, optionally wrapping them in the
/// JSON-lines call logger.
pub fn build_providers(
    cfg: &MiningConfig,
    log: Option<Arc<JsonlWriter>>,
) -> Result<Providers, OrchestratorError> {
    let (chat, embedder): (Box<dyn ChatProvider>, Box<dyn EmbeddingProvider>) =
        match cfg.provider.kind {
            ProviderKind::MockMutator => (
                Box::new(MutatorChat::new(cfg.rng_seed)),
                Box::new(HashEmbedder::new(cfg.rng_seed)),
            ),
            ProviderKind::Http => {
                let endpoint = cfg.provider.endpoint.clone().ok_or_else(|| {
                    OrchestratorError::Config("http provider requires an endpoint".into())
                })?;
                let api_key = cfg.resolved_api_key().ok_or_else(|| {
                    OrchestratorError::Config(format!(
                        "http provider requires a credential (config api_key or ${} in the environment)",
                        cfg.provider.api_key_env
                    ))
                })?;
                let base = HttpConfig {
                    endpoint,
                    api_key,
                    model: cfg.provider.chat_model.clone(),
                    timeout: Duration::from_secs(cfg.provider.timeout_secs),
                    transport_retries: cfg.provider.transport_retries,
                };
                let embed_cfg = HttpConfig {
                    model: cfg.provider.embedding_model.clone(),
                    ..base.clone()
                };
                (
                    Box::new(HttpChatClient::new(base)?),
                    Box::new(HttpEmbeddingClient::new(embed_cfg)?),
                )
            }
        };
    Ok(match log {
        Some(log) => Providers {
            chat: Box::new(LoggedChat::new(chat, Arc::clone(&log))),
            embedder: Box::new(LoggedEmbedder::new(embedder, log)),
        },
        None => Providers { chat, embedder },
    })
}

/// Resumable run state: the graph plus loop counters, fingerprinted against
/// the panel it was produced from.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub panel_fingerprint: String,
    pub iterations_done: u32,
    pub stagnation: u32,
    pub candidates_evaluated: u64,
    pub graph: GraphDoc,
}

/// Load either a bare graph document or a full checkpoint from `path`.
pub fn load_graph_flexible(path: &Path) -> Result<(FactorGraph, Option<Checkpoint>), OrchestratorError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("graph").is_some() {
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(OrchestratorError::CheckpointSchema {
                found: ckpt.schema_version,
            });
        }
        let graph = FactorGraph::from_document(ckpt.graph.clone())?;
        Ok((graph, Some(ckpt)))
    } else {
        let doc: GraphDoc = serde_json::from_value(value)?;
        Ok((FactorGraph::from_document(doc)?, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParentScoreRecord {
    pub node_id: NodeId,
    pub is_leaf: bool,
    pub prior: f64,
    pub likelihood: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub parents: Vec<ParentScoreRecord>,
    /// Parsed candidates out of the synthesis stage (before screening).
    pub candidates_generated: usize,
    /// Candidates surviving the syntactic screen.
    pub candidates_screened: usize,
    pub admitted: Vec<NodeId>,
    pub rejected: usize,
    pub evicted: Vec<NodeId>,
    pub pool_size: usize,
    pub pool_mean_quality: f64,
    pub pool_max_quality: f64,
    /// Running count of candidate evaluations (the per-candidate axis).
    pub candidates_evaluated_cum: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolEntry {
    pub id: NodeId,
    pub expr: String,
    pub explanation: String,
    pub quality: f64,
    pub depth: u32,
    pub k: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub rows: usize,
    pub mega_members: usize,
    /// None when the composite signal had no valid day on this split.
    pub metrics: Option<MetricReport>,
    pub backtest: Option<BacktestSummary>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub iterations: Vec<IterationRecord>,
    pub final_pool: Vec<PoolEntry>,
    pub splits: BTreeMap<String, SplitReport>,
    pub candidates_evaluated: u64,
}

/// Paths and report produced by a finished run.
#[derive(Debug)]
pub struct MiningOutcome {
    pub report: RunReport,
    pub checkpoint_path: PathBuf,
    pub report_path: PathBuf,
}

struct Session<'a> {
    cfg: &'a MiningConfig,
    panel: &'a Panel,
    panel_fingerprint: String,
    returns: ReturnMatrix,
    train_rows: std::ops::Range<usize>,
    graph: FactorGraph,
    /// Full-panel factor values for every node ever admitted.
    values: BTreeMap<NodeId, Array2<f64>>,
    /// Explanation embeddings for the active pool.
    embeddings: BTreeMap<NodeId, Vec<f64>>,
    chat: Box<dyn ChatProvider>,
    embedder: Box<dyn EmbeddingProvider>,
    events: JsonlWriter,
    scores_csv: Option<std::fs::File>,
    run_dir: PathBuf,
    iterations_done: u32,
    stagnation: u32,
    candidates_evaluated: u64,
    records: Vec<IterationRecord>,
    prompt_counter: AtomicU32,
    /// Canonical seed expression -> topic, for lineage topic lookup.
    seed_topics: BTreeMap<String, String>,
}

impl<'a> Session<'a> {
    fn create(
        cfg: &'a MiningConfig,
        panel: &'a Panel,
        providers: Providers,
        run_dir: &Path,
        append_logs: bool,
    ) -> Result<Self, OrchestratorError> {
        cfg.validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        fs::create_dir_all(run_dir)?;
        let returns = forward_returns(panel, cfg.forward_horizon)?;
        let train_rows = panel.row_range(cfg.splits.train.start, cfg.splits.train.end);
        if train_rows.is_empty() {
            return Err(OrchestratorError::Config(
                "training split covers no panel dates".into(),
            ));
        }
        let events = JsonlWriter::to_file(&run_dir.join("events.jsonl"), append_logs)?;
        let scores_csv = if cfg.dump_scores {
            let path = run_dir.join("scores.csv");
            let fresh = !append_logs || !path.exists();
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)?;
            if fresh {
                use std::io::Write;
                writeln!(file, "iteration,node_id,is_leaf,prior,likelihood,total")?;
            }
            Some(file)
        } else {
            None
        };
        if cfg.dump_prompts {
            fs::create_dir_all(run_dir.join("prompts"))?;
        }
        let seed_topics = cfg
            .seeds
            .iter()
            .filter_map(|s| {
                crate::expr::parse(&s.expr)
                    .ok()
                    .map(|e| (e.render(), s.topic.clone()))
            })
            .collect();
        Ok(Session {
            cfg,
            panel,
            panel_fingerprint: panel.fingerprint(),
            returns,
            train_rows,
            graph: FactorGraph::new(),
            values: BTreeMap::new(),
            embeddings: BTreeMap::new(),
            chat: providers.chat,
            embedder: providers.embedder,
            events,
            scores_csv,
            run_dir: run_dir.to_path_buf(),
            iterations_done: 0,
            stagnation: 0,
            candidates_evaluated: 0,
            records: Vec::new(),
            prompt_counter: AtomicU32::new(0),
            seed_topics,
        })
    }

    fn train_slice<'m>(&self, m: &'m Array2<f64>) -> ArrayView2<'m, f64> {
        m.slice(s![self.train_rows.clone(), ..])
    }

    fn returns_train(&self) -> ArrayView2<'_, f64> {
        self.returns.values.slice(s![self.train_rows.clone(), ..])
    }

    fn evaluate_and_grade(&self, expr: &crate::expr::Expr) -> (Array2<f64>, f64) {
        let full = evaluate(expr, self.panel).values;
        let q = quality(self.train_slice(&full), self.returns_train(), self.cfg.min_assets);
        (full, q)
    }

    /// Explanations can come back empty from a provider; fall back to the
    /// expression text so the embedding input is never empty.
    fn embed_for(&self, explanation: &str, expr_text: &str) -> Result<Vec<f64>, ProviderError> {
        let text = if explanation.trim().is_empty() {
            expr_text
        } else {
            explanation
        };
        Ok(self.embedder.embed(text)?.into_vec())
    }

    fn bootstrap_seeds(&mut self) -> Result<(), OrchestratorError> {
        if self.cfg.seeds.is_empty() {
            return Err(OrchestratorError::Config(
                "at least one seed expression is required".into(),
            ));
        }
        for spec in &self.cfg.seeds {
            let expr = crate::expr::parse(&spec.expr)
                .map_err(|e| OrchestratorError::Config(format!("seed '{}': {e}", spec.expr)))?;
            let (full, q) = self.evaluate_and_grade(&expr);
            if !self.train_slice(&full).iter().any(|v| v.is_finite()) {
                return Err(OrchestratorError::SeedDegenerate {
                    expr: spec.expr.clone(),
                });
            }
            let explanation = spec
                .explanation
                .clone()
                .unwrap_or_else(|| format!("Seed factor for topic: {}", spec.topic));
            let id = self
                .graph
                .insert_node(expr, explanation.clone(), None, q, 0)?;
            let expr_text = self.graph.node(id)?.expr_text.clone();
            let emb = self.embed_for(&explanation, &expr_text)?;
            self.values.insert(id, full);
            self.embeddings.insert(id, emb);
            self.events.append(&json!({
                "event": "seed",
                "node_id": id,
                "expr": expr_text,
                "explanation": explanation,
                "quality": q,
            }));
        }
        Ok(())
    }

    fn topic_for_trace(&self, root_expr_text: &str) -> String {
        self.seed_topics
            .get(root_expr_text)
            .cloned()
            .or_else(|| self.cfg.seeds.first().map(|s| s.topic.clone()))
            .unwrap_or_default()
    }

    fn pool_quality(&self) -> (f64, f64) {
        let qs: Vec<f64> = self.graph.active_nodes().map(|n| n.quality).collect();
        let mean = qs.iter().sum::<f64>() / qs.len().max(1) as f64;
        let max = qs.iter().fold(0.0f64, |acc, q| acc.max(*q));
        (mean, max)
    }

    fn run_iteration(&mut self) -> Result<(), OrchestratorError> {
        let iteration = self.iterations_done + 1;

        // 1. select parents on the current snapshot
        let ctx = ScoreContext {
            values: self
                .values
                .iter()
                .map(|(id, m)| (*id, m.slice(s![self.train_rows.clone(), ..])))
                .collect(),
            embeddings: &self.embeddings,
            min_assets: self.cfg.min_assets,
        };
        let selection = select_parents(
            &mut self.graph,
            self.cfg.parents_per_iteration,
            self.cfg.gamma,
            self.cfg.omega,
            &ctx,
        )?;
        drop(ctx);
        if let Some(file) = &mut self.scores_csv {
            use std::io::Write;
            for sc in &selection.scored {
                writeln!(
                    file,
                    "{iteration},{},{},{},{},{}",
                    sc.node_id, sc.is_leaf, sc.prior, sc.likelihood, sc.total
                )?;
            }
        }
        let parents: Vec<ParentScoreRecord> = selection
            .selected
            .iter()
            .map(|s| ParentScoreRecord {
                node_id: s.node_id,
                is_leaf: s.is_leaf,
                prior: s.prior,
                likelihood: s.likelihood,
                total: s.total,
            })
            .collect();
        self.events.append(&json!({
            "event": "selection",
            "iteration": iteration,
            "parents": parents.iter().map(|p| p.node_id).collect::<Vec<_>>(),
        }));

        // 2. generate candidates for each parent, in selection order
        let mut candidates: Vec<CandidateFactor> = Vec::new();
        let mut generated = 0usize;
        {
            let prompt_dir = self.run_dir.join("prompts");
            let counter = &self.prompt_counter;
            let dump_fn = move |stage: &str, req: &ChatRequest| {
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let path = prompt_dir.join(format!("{n:04}_{stage}.txt"));
                let body = format!("[system]\n{}\n\n[user]\n{}\n", req.system, req.user);
                if let Err(e) = fs::write(&path, body) {
                    log::warn!("prompt dump failed: {e}");
                }
            };
            let sink: PromptSink = if self.cfg.dump_prompts {
                Some(&dump_fn)
            } else {
                None
            };
            let settings_base = GenSettings {
                m: self.cfg.strategies_per_parent,
                topic: String::new(),
                temperature: self.cfg.provider.temperature,
                max_tokens: self.cfg.provider.max_tokens,
                json_attempts: self.cfg.provider.json_attempts,
            };
            for score in &selection.selected {
                let trace = self.graph.trace(score.node_id)?;
                let parent = *trace.last().expect("trace includes the node");
                let settings = GenSettings {
                    topic: self.topic_for_trace(&trace[0].expr_text),
                    ..settings_base.clone()
                };
                let strategies =
                    propose_strategies(parent, &trace, &settings, self.chat.as_ref(), sink)?;
                let (kept, dropped) = synthesize(
                    parent,
                    &strategies,
                    &trace,
                    &settings,
                    self.chat.as_ref(),
                    sink,
                )?;
                for d in &dropped {
                    self.events.append(&json!({
                        "event": "dropped",
                        "iteration": iteration,
                        "raw": d.raw_text,
                        "reason": d.reason,
                    }));
                }
                generated += kept.len();
                candidates.extend(kept);
            }
        }

        // 3. syntactic screen against the whole graph
        let lint_opts = LintOptions {
            max_len: self.cfg.max_len,
            float_whitelist: self.cfg.float_whitelist.clone(),
            dimensional: true,
        };
        let screened = screen(candidates, &lint_opts, &self.graph);
        for rej in &screened.rejected {
            self.events.append(&json!({
                "event": "screened_out",
                "iteration": iteration,
                "expr": rej.expr_text,
                "reason": rej.reason,
            }));
        }
        let kept = screened.kept;

        // 4. evaluate candidates on the training split (parallel, ordered)
        let graded: Vec<(Array2<f64>, f64)> = kept
            .par_iter()
            .map(|c| self.evaluate_and_grade(&c.expr))
            .collect();
        self.candidates_evaluated += kept.len() as u64;

        // 5. admit sequentially in descending candidate quality
        let mut order: Vec<usize> = (0..kept.len()).collect();
        order.sort_by(|&a, &b| graded[b].1.total_cmp(&graded[a].1).then(a.cmp(&b)));
        let mut admitted = Vec::new();
        let mut rejected = 0usize;
        for idx in order {
            let candidate = &kept[idx];
            let (full, q) = &graded[idx];
            let cand_train = self.train_slice(full);
            let active_ids: Vec<NodeId> = self.graph.active_nodes().map(|n| n.id).collect();
            let mut max_abs_corr = f64::NAN;
            for mid in active_ids {
                let member = &self.values[&mid];
                let c = factor_corr(cand_train, self.train_slice(member), self.cfg.min_assets);
                if !c.is_nan() && (max_abs_corr.is_nan() || c.abs() > max_abs_corr) {
                    max_abs_corr = c.abs();
                }
            }
            let parent_quality = self.graph.node(candidate.parent_id)?.quality;
            let decision = admit(
                *q,
                parent_quality,
                max_abs_corr,
                self.cfg.tau_quality,
                self.cfg.tau_diversity,
            );
            let expr_text = candidate.expr.render();
            if decision.admitted {
                match self.graph.insert_node(
                    candidate.expr.clone(),
                    candidate.explanation.clone(),
                    Some(candidate.parent_id),
                    *q,
                    iteration,
                ) {
                    Ok(id) => {
                        let emb = self.embed_for(&candidate.explanation, &expr_text)?;
                        self.values.insert(id, full.clone());
                        self.embeddings.insert(id, emb);
                        admitted.push(id);
                        self.events.append(&json!({
                            "event": "admission",
                            "iteration": iteration,
                            "node_id": id,
                            "parent_id": candidate.parent_id,
                            "expr": expr_text,
                            "explanation": candidate.explanation,
                            "quality": q,
                            "branch": decision.branch,
                            "gain": decision.gain,
                            "max_abs_pool_corr": decision.max_abs_pool_corr,
                        }));
                    }
                    Err(GraphError::DuplicateExpression(_)) => {
                        rejected += 1;
                        self.events.append(&json!({
                            "event": "rejection",
                            "iteration": iteration,
                            "expr": expr_text,
                            "reason": "duplicate at insert time",
                        }));
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                rejected += 1;
                self.events.append(&json!({
                    "event": "rejection",
                    "iteration": iteration,
                    "parent_id": candidate.parent_id,
                    "expr": expr_text,
                    "quality": q,
                    "branch": decision.branch,
                    "gain": decision.gain,
                    "max_abs_pool_corr": decision.max_abs_pool_corr,
                }));
            }
        }

        // 6. evict down to capacity; evicted nodes keep lineage and values
        let mut evicted = Vec::new();
        while let Some(id) = self.graph.evict_lowest(self.cfg.capacity) {
            self.embeddings.remove(&id);
            evicted.push(id);
            self.events.append(&json!({
                "event": "eviction",
                "iteration": iteration,
                "node_id": id,
            }));
        }
        debug_assert!(self.graph.active_count() <= self.cfg.capacity);

        // 7. bookkeeping, stagnation, checkpoint
        self.iterations_done = iteration;
        if admitted.is_empty() {
            self.stagnation += 1;
        } else {
            self.stagnation = 0;
        }
        let (pool_mean_quality, pool_max_quality) = self.pool_quality();
        self.records.push(IterationRecord {
            iteration,
            parents,
            candidates_generated: generated,
            candidates_screened: kept.len(),
            admitted,
            rejected,
            evicted,
            pool_size: self.graph.active_count(),
            pool_mean_quality,
            pool_max_quality,
            candidates_evaluated_cum: self.candidates_evaluated,
        });
        self.write_checkpoint()?;
        Ok(())
    }

    fn write_checkpoint(&self) -> Result<PathBuf, OrchestratorError> {
        let ckpt = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            panel_fingerprint: self.panel_fingerprint.clone(),
            iterations_done: self.iterations_done,
            stagnation: self.stagnation,
            candidates_evaluated: self.candidates_evaluated,
            graph: self.graph.to_document(),
        };
        let path = self.run_dir.join("checkpoint.json");
        let tmp = self.run_dir.join("checkpoint.json.tmp");
        let mut body = serde_json::to_vec_pretty(&ckpt)?;
        body.push(b'\n');
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    fn drive(&mut self) -> Result<RunStatus, OrchestratorError> {
        let mut status = RunStatus::Completed;
        while self.iterations_done < self.cfg.iterations {
            self.run_iteration()?;
            if self.stagnation >= self.cfg.stagnation_patience {
                status = RunStatus::EarlyStopped;
                break;
            }
        }
        Ok(status)
    }

    fn split_report(&self, rows: std::ops::Range<usize>, name: &str) -> Result<SplitReport, OrchestratorError> {
        let members: Vec<(NodeId, ArrayView2<f64>)> = self
            .graph
            .active_nodes()
            .map(|n| (n.id, self.values[&n.id].slice(s![rows.clone(), ..])))
            .collect();
        let returns = self.returns.values.slice(s![rows.clone(), ..]);
        let integ = IntegratorConfig {
            window: self.cfg.integrator.window,
            threshold: self.cfg.integrator.threshold,
            rebalance_every: self.cfg.integrator.rebalance_every,
            min_assets: self.cfg.min_assets,
        };
        let outcome = mega_factor(&members, returns, &integ)?;
        let metrics = ic_suite(outcome.values.view(), returns, self.cfg.min_assets).ok();
        let close = self.panel.close().slice(s![rows.clone(), ..]);
        let bt = simulate(outcome.values.view(), close, &self.cfg.backtest)?;

        let dates = &self.panel.dates()[rows.clone()];
        let curve = std::fs::File::create(self.run_dir.join(format!("mega_{name}_curve.csv")))?;
        bt.write_curve_csv(dates, std::io::BufWriter::new(curve))?;
        let weights = std::fs::File::create(self.run_dir.join(format!("mega_{name}_weights.csv")))?;
        write_weights_csv(&outcome, dates, std::io::BufWriter::new(weights))?;

        Ok(SplitReport {
            rows: rows.len(),
            mega_members: members.len(),
            metrics,
            backtest: Some(bt.summary()),
        })
    }

    fn finalize(&mut self, status: RunStatus) -> Result<MiningOutcome, OrchestratorError> {
        let mut splits = BTreeMap::new();
        for (name, range) in self.cfg.splits.named() {
            let rows = self.panel.row_range(range.start, range.end);
            if rows.is_empty() {
                continue;
            }
            splits.insert(name.to_string(), self.split_report(rows, name)?);
        }
        let final_pool = self
            .graph
            .active_nodes()
            .map(|n| PoolEntry {
                id: n.id,
                expr: n.expr_text.clone(),
                explanation: n.explanation.clone(),
                quality: n.quality,
                depth: n.depth,
                k: n.retrievals,
            })
            .collect();
        let report = RunReport {
            status,
            iterations: std::mem::take(&mut self.records),
            final_pool,
            splits,
            candidates_evaluated: self.candidates_evaluated,
        };
        let report_path = self.run_dir.join("report.json");
        let mut body = serde_json::to_vec_pretty(&report)?;
        body.push(b'\n');
        fs::write(&report_path, body)?;
        let checkpoint_path = self.write_checkpoint()?;
        Ok(MiningOutcome {
            report,
            checkpoint_path,
            report_path,
        })
    }
}

/// Run the full mining loop from scratch, writing all artifacts into
/// `run_dir` (checkpoint.json, report.json, events.jsonl, per-split mega
/// curves and weights).
pub fn run_mining(
    cfg: &MiningConfig,
    panel: &Panel,
    providers: Providers,
    run_dir: &Path,
) -> Result<MiningOutcome, OrchestratorError> {
    let mut session = Session::create(cfg, panel, providers, run_dir, false)?;
    session.bootstrap_seeds()?;
    session.write_checkpoint()?;
    let status = session.drive()?;
    session.finalize(status)
}

/// Continue a checkpointed run. The panel must fingerprint-match the
/// checkpoint and the configured capacity must still fit the active pool.
/// Factor values are re-evaluated and explanations re-embedded on load.
pub fn resume(
    checkpoint_path: &Path,
    cfg: &MiningConfig,
    panel: &Panel,
    providers: Providers,
    run_dir: &Path,
) -> Result<MiningOutcome, OrchestratorError> {
    let text = fs::read_to_string(checkpoint_path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(OrchestratorError::CheckpointSchema {
            found: ckpt.schema_version,
        });
    }
    let actual = panel.fingerprint();
    if ckpt.panel_fingerprint != actual {
        return Err(OrchestratorError::PanelMismatch {
            stored: ckpt.panel_fingerprint,
            actual,
        });
    }
    let graph = FactorGraph::from_document(ckpt.graph)?;
    if cfg.capacity < graph.active_count() {
        return Err(OrchestratorError::CapacityTooSmall {
            capacity: cfg.capacity,
            active: graph.active_count(),
        });
    }

    let mut session = Session::create(cfg, panel, providers, run_dir, true)?;
    session.iterations_done = ckpt.iterations_done;
    session.stagnation = ckpt.stagnation;
    session.candidates_evaluated = ckpt.candidates_evaluated;
    session.graph = graph;

    // rebuild the value cache for every node and embeddings for the pool
    let nodes: Vec<(NodeId, crate::expr::Expr, String, String, bool)> = session
        .graph
        .nodes()
        .map(|n| {
            (
                n.id,
                n.expr.clone(),
                n.explanation.clone(),
                n.expr_text.clone(),
                n.active,
            )
        })
        .collect();
    let evaluated: Vec<(NodeId, Array2<f64>)> = nodes
        .par_iter()
        .map(|(id, expr, _, _, _)| (*id, evaluate(expr, panel).values))
        .collect();
    for (id, values) in evaluated {
        session.values.insert(id, values);
    }
    for (id, _, explanation, expr_text, active) in &nodes {
        if *active {
            let emb = session.embed_for(explanation, expr_text)?;
            session.embeddings.insert(*id, emb);
        }
    }

    let status = session.drive()?;
    session.finalize(status)
}
