//! Three-stage candidate generation: a strategy stage that turns the
//! parent's lineage into modification plans, a synthesis stage that turns
//! each plan into a concrete expression, and a local syntactic screen.
//!
//! The screen is deliberately not a model call: it is the parser, the
//! linter, and a duplicate check against every expression ever admitted to
//! the graph. Prompts are assembled from text assets; each user prompt
//! carries the operator-definition block exactly once.

use thiserror::Error;

use crate::expr::{lint, parse, Expr, LintOptions};
use crate::graph::{FactorGraph, FactorNode, NodeId};
use crate::providers::{chat_json, ChatProvider, ChatRequest, ProviderError};

pub const SYSTEM_PROMPT: &str = include_str!("../assets/prompt_system.txt");
pub const OPERATOR_BLOCK: &str = include_str!("../assets/prompt_operators.txt");
const STRATEGY_TEMPLATE: &str = include_str!("../assets/prompt_strategy.txt");
const EXECUTION_TEMPLATE: &str = include_str!("../assets/prompt_execution.txt");

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{stage} stage failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

/// Per-call generation settings; `m` is the number of strategies and
/// candidate expressions requested from each stage.
#[derive(Debug, Clone)]
pub struct GenSettings {
    pub m: usize,
    pub topic: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Re-ask budget for unparseable JSON responses.
    pub json_attempts: usize,
}

/// Observer for assembled prompts (`--dump-prompts`).
pub type PromptSink<'a> = Option<&'a dyn Fn(&str, &ChatRequest)>;

/// A parsed, not-yet-evaluated candidate produced by the synthesis stage.
#[derive(Debug, Clone)]
pub struct CandidateFactor {
    pub expr: Expr,
    /// Text exactly as the provider produced it (pre-canonicalization).
    pub raw_text: String,
    pub explanation: String,
    pub strategy: Option<String>,
    pub parent_id: NodeId,
    /// True when `expressions_fixed[i]` was used instead of `expressions[i]`.
    pub used_fixed: bool,
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Ancestor lines for the prompt, oldest first, excluding the parent itself.
/// A root parent has no history and renders as the empty-trace marker.
pub fn render_trace(trace: &[&FactorNode]) -> String {
    if trace.len() <= 1 {
        return "(none)".to_string();
    }
    trace[..trace.len() - 1]
        .iter()
        .map(|n| format!("depth {}: {} — {}", n.depth, n.expr_text, n.explanation))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn strategy_prompt(
    parent: &FactorNode,
    trace: &[&FactorNode],
    settings: &GenSettings,
) -> ChatRequest {
    let num = settings.m.to_string();
    let body = fill(
        STRATEGY_TEMPLATE,
        &[
            ("topic", settings.topic.as_str()),
            ("num", num.as_str()),
            ("expressions", parent.expr_text.as_str()),
            ("explanations", parent.explanation.as_str()),
            ("traces", render_trace(trace).as_str()),
        ],
    );
    ChatRequest {
        system: SYSTEM_PROMPT.trim_end().to_string(),
        user: format!("{OPERATOR_BLOCK}\n{body}"),
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
    }
}

pub fn execution_prompt(
    parent: &FactorNode,
    strategies: &[String],
    trace: &[&FactorNode],
    settings: &GenSettings,
) -> ChatRequest {
    let num = settings.m.to_string();
    let strategies_json =
        serde_json::to_string(strategies).expect("string arrays always serialize");
    let body = fill(
        EXECUTION_TEMPLATE,
        &[
            ("topic", settings.topic.as_str()),
            ("num", num.as_str()),
            ("expressions", parent.expr_text.as_str()),
            ("explanations", parent.explanation.as_str()),
            ("traces", render_trace(trace).as_str()),
            ("strategies", strategies_json.as_str()),
        ],
    );
    ChatRequest {
        system: SYSTEM_PROMPT.trim_end().to_string(),
        user: format!("{OPERATOR_BLOCK}\n{body}"),
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
    }
}

fn string_array(value: &serde_json::Value, field: &str) -> Option<Vec<String>> {
    let arr = value.get(field)?.as_array()?;
    Some(
        arr.iter()
            .filter_map(|v| v.as_str().map(ToString::to_string))
            .collect(),
    )
}

/// Ask the strategy stage for `m` modification plans. Over-delivery is
/// truncated; under-delivery triggers one re-ask with the same prompt, after
/// which whatever arrived is accepted (an empty result is a stage error).
pub fn propose_strategies(
    parent: &FactorNode,
    trace: &[&FactorNode],
    settings: &GenSettings,
    chat: &dyn ChatProvider,
    sink: PromptSink,
) -> Result<Vec<String>, GeneratorError> {
    let request = strategy_prompt(parent, trace, settings);
    if let Some(dump) = sink {
        dump("strategy", &request);
    }
    let mut best: Vec<String> = Vec::new();
    for _ in 0..2 {
        let (json, _) = chat_json(chat, &request, settings.json_attempts)?;
        let mut strategies = string_array(&json, "strategies").unwrap_or_default();
        if strategies.len() >= settings.m {
            strategies.truncate(settings.m);
            return Ok(strategies);
        }
        if strategies.len() > best.len() {
            best = strategies;
        }
    }
    if best.is_empty() {
        return Err(GeneratorError::Stage {
            stage: "strategy",
            message: "empty strategies array".into(),
        });
    }
    Ok(best)
}

/// A candidate the synthesis stage produced but that failed to parse.
#[derive(Debug, Clone)]
pub struct DroppedCandidate {
    pub raw_text: String,
    pub reason: String,
}

/// Turn strategies into parsed candidates. For each index the fixed form is
/// preferred when it parses; otherwise the raw form; otherwise the candidate
/// is dropped with its parse error. An all-unparseable batch is an empty
/// result, not an error.
pub fn synthesize(
    parent: &FactorNode,
    strategies: &[String],
    trace: &[&FactorNode],
    settings: &GenSettings,
    chat: &dyn ChatProvider,
    sink: PromptSink,
) -> Result<(Vec<CandidateFactor>, Vec<DroppedCandidate>), GeneratorError> {
    if strategies.is_empty() {
        return Err(GeneratorError::Stage {
            stage: "synthesis",
            message: "no strategies to execute".into(),
        });
    }
    let request = execution_prompt(parent, strategies, trace, settings);
    if let Some(dump) = sink {
        dump("execution", &request);
    }
    let (json, _) = chat_json(chat, &request, settings.json_attempts)?;
    let expressions = string_array(&json, "expressions");
    let fixed = string_array(&json, "expressions_fixed");
    let explanations = string_array(&json, "explanations");
    let (Some(expressions), Some(fixed), Some(explanations)) = (expressions, fixed, explanations)
    else {
        return Err(GeneratorError::Stage {
            stage: "synthesis",
            message: "response is missing one of expressions/expressions_fixed/explanations"
                .into(),
        });
    };

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, raw) in expressions.iter().enumerate() {
        let fixed_text = fixed.get(i);
        let parsed = match fixed_text.map(|t| (parse(t), t)) {
            Some((Ok(expr), text)) => Some((expr, text.clone(), text != raw)),
            _ => match parse(raw) {
                Ok(expr) => Some((expr, raw.clone(), false)),
                Err(e) => {
                    dropped.push(DroppedCandidate {
                        raw_text: raw.clone(),
                        reason: e.to_string(),
                    });
                    None
                }
            },
        };
        if let Some((expr, text, used_fixed)) = parsed {
            kept.push(CandidateFactor {
                expr,
                raw_text: text,
                explanation: explanations.get(i).cloned().unwrap_or_default(),
                strategy: strategies.get(i).cloned(),
                parent_id: parent.id,
                used_fixed,
            });
        }
    }
    Ok((kept, dropped))
}

#[derive(Debug, Clone)]
pub struct ScreenRejection {
    pub expr_text: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ScreenOutcome {
    pub kept: Vec<CandidateFactor>,
    pub rejected: Vec<ScreenRejection>,
}

/// Syntactic admission screen: error-free lint, and expression uniqueness
/// against the whole graph (evicted nodes included) and within the batch.
/// Dimensional findings are warnings and never reject.
pub fn screen(
    candidates: Vec<CandidateFactor>,
    opts: &LintOptions,
    graph: &FactorGraph,
) -> ScreenOutcome {
    let mut outcome = ScreenOutcome::default();
    let mut seen_in_batch = std::collections::HashSet::new();
    for candidate in candidates {
        let canonical = candidate.expr.render();
        let report = lint(&candidate.expr, opts);
        if !report.is_clean() {
            let reasons: Vec<String> =
                report.errors().map(|v| v.message.clone()).collect();
            outcome.rejected.push(ScreenRejection {
                expr_text: canonical,
                reason: format!("lint: {}", reasons.join("; ")),
            });
            continue;
        }
        if graph.contains_expression(&canonical) {
            outcome.rejected.push(ScreenRejection {
                expr_text: canonical,
                reason: "duplicate of an existing graph node".into(),
            });
            continue;
        }
        if !seen_in_batch.insert(canonical.clone()) {
            outcome.rejected.push(ScreenRejection {
                expr_text: canonical,
                reason: "duplicate within the candidate batch".into(),
            });
            continue;
        }
        outcome.kept.push(candidate);
    }
    outcome
}
