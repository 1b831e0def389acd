//! Deterministic offline providers.
//!
//! [`ScriptedChat`] replays a fixed queue of responses for unit tests.
//! [`MutatorChat`] emulates the two generation stages end to end: it reads
//! the parent expression and requested count out of the prompt, then derives
//! every choice from `(seed, prompt)` so a whole mining run is
//! bit-reproducible. [`HashEmbedder`] is a seeded feature-hashing
//! bag-of-tokens embedder: same text, same vector, token-disjoint texts land
//! in disjoint buckets (absent hash collisions).

use std::collections::VecDeque;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::json;

use crate::expr::{parse, Expr, Feature};
use crate::util::sha256_u64;

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingVector, ProviderError};

/// Replays canned responses in order; errors when exhausted.
pub struct ScriptedChat {
    responses: Mutex<VecDeque<String>>,
}

impl ScriptedChat {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses: Mutex::new(responses.into()),
        }
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut guard = self.responses.lock().expect("scripted chat poisoned");
        match guard.pop_front() {
            Some(raw) => Ok(ChatResponse::from_raw(raw)),
            None => Err(ProviderError::Config("scripted chat exhausted".into())),
        }
    }

    fn name(&self) -> &'static str {
        "scripted-chat"
    }
}

const STRATEGY_THEMES: [&str; 8] = [
    "Swap one base feature for a related series to test whether the signal is feature-specific",
    "Wrap the signal in a cross-sectional rank to make it scale-free across assets",
    "Compare today's value against its rolling extremes to capture breakout behaviour",
    "Relate two price series through a rolling correlation to capture co-movement",
    "Simplify the expression down to its core ratio and drop decorative terms",
    "Replace a raw difference with a percentage change so magnitudes are comparable",
    "Smooth the signal with a short rolling mean to suppress one-day noise",
    "Standardize the signal by rolling dispersion to penalize unstable regimes",
];

/// Seed expressions the mutator reaches for when it rewrites from scratch:
/// simple ratio/range/co-movement shapes over the base features.
const TEMPLATES: [(&str, &str); 10] = [
    (
        "Div($low, $high)",
        "Ratio of the daily low to the daily high, locating the close of the day's trading range",
    ),
    (
        "Rank(Div($low, $high))",
        "Cross-sectional rank of the low-to-high ratio, comparing range compression across assets",
    ),
    (
        "TsMean(Div($low, $high), 5)",
        "Five-day average of the low-to-high ratio, smoothing the range-compression signal",
    ),
    (
        "Div($open, $close)",
        "Open-to-close ratio capturing the direction of the intraday move",
    ),
    (
        "Div($close, $vwap)",
        "Close relative to the volume-weighted average price, a demand-pressure proxy",
    ),
    (
        "Sub($high, $low)",
        "Daily trading range as a raw volatility proxy",
    ),
    (
        "Div(Sub($high, $low), $close)",
        "Daily range normalized by the close, a dimensionless volatility measure",
    ),
    (
        "TsCorr($close, $volume, 10)",
        "Ten-day correlation between price level and traded volume",
    ),
    (
        "TsRank($close, 10)",
        "Position of today's close within its ten-day range",
    ),
    (
        "Rank(Sub($close, $open))",
        "Cross-sectional rank of the intraday price change",
    ),
];

/// Prompt-seeded mutation model standing in for a real chat model.
pub struct MutatorChat {
    seed: u64,
}

impl MutatorChat {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let h = sha256_u64(format!("{}\n{}", request.system, request.user).as_bytes());
        ChaCha8Rng::seed_from_u64(self.seed ^ h)
    }

    fn requested_count(user: &str) -> usize {
        // the templates spell the count as "... should be {num}"
        let re = Regex::new(r"should be (\d+)").expect("static regex");
        re.captures(user)
            .and_then(|c| c[1].parse::<usize>().ok())
            .unwrap_or(5)
    }

    fn parent_expr(user: &str) -> Option<Expr> {
        let line = user
            .lines()
            .find(|l| l.starts_with("Given expressions:"))?
            .trim_start_matches("Given expressions:")
            .trim();
        parse(line).ok()
    }

    fn strategy_response(&self, request: &ChatRequest) -> String {
        let mut rng = self.rng_for(request);
        let m = Self::requested_count(&request.user);
        // occasionally over-deliver to exercise the truncation path
        let count = if rng.gen_ratio(1, 8) { m + 2 } else { m };
        let offset = rng.gen_range(0..STRATEGY_THEMES.len());
        let strategies: Vec<String> = (0..count)
            .map(|i| STRATEGY_THEMES[(offset + i) % STRATEGY_THEMES.len()].to_string())
            .collect();
        json!({ "strategies": strategies }).to_string()
    }

    fn execution_response(&self, request: &ChatRequest) -> String {
        let mut rng = self.rng_for(request);
        let m = Self::requested_count(&request.user);
        let parent = Self::parent_expr(&request.user)
            .unwrap_or(Expr::Feature(Feature::Close));
        let mut expressions = Vec::with_capacity(m);
        let mut explanations = Vec::with_capacity(m);
        for _ in 0..m {
            let (expr, why) = mutate(&parent, &mut rng);
            expressions.push(expr.render());
            explanations.push(why);
        }
        json!({
            "expressions": expressions,
            "expressions_fixed": expressions,
            "explanations": explanations,
        })
        .to_string()
    }
}

impl ChatProvider for MutatorChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let raw = if request.user.contains("\"expressions_fixed\"") {
            self.execution_response(request)
        } else if request.user.contains("\"strategies\"") {
            self.strategy_response(request)
        } else {
            return Err(ProviderError::MalformedResponse(
                "mutator chat cannot classify prompt stage".into(),
            ));
        };
        Ok(ChatResponse::from_raw(raw))
    }

    fn name(&self) -> &'static str {
        "mutator-chat"
    }
}

fn feature_slots(expr: &Expr) -> usize {
    match expr {
        Expr::Feature(_) => 1,
        Expr::IntConst(_) | Expr::FloatConst(_) => 0,
        Expr::Unary(_, c) | Expr::Rolling(_, c, _) => feature_slots(c),
        Expr::Binary(_, l, r) | Expr::RollingBin(_, l, r, _) => {
            feature_slots(l) + feature_slots(r)
        }
    }
}

fn replace_feature(expr: &Expr, slot: &mut usize, with: Feature) -> Expr {
    match expr {
        Expr::Feature(f) => {
            if *slot == 0 {
                *slot = usize::MAX; // consumed
                Expr::Feature(with)
            } else {
                *slot = slot.wrapping_sub(1);
                Expr::Feature(*f)
            }
        }
        Expr::IntConst(_) | Expr::FloatConst(_) => expr.clone(),
        Expr::Unary(op, c) => Expr::Unary(*op, Box::new(replace_feature(c, slot, with))),
        Expr::Binary(op, l, r) => Expr::Binary(
            *op,
            Box::new(replace_feature(l, slot, with)),
            Box::new(replace_feature(r, slot, with)),
        ),
        Expr::Rolling(op, c, d) => {
            Expr::Rolling(*op, Box::new(replace_feature(c, slot, with)), *d)
        }
        Expr::RollingBin(op, l, r, d) => Expr::RollingBin(
            *op,
            Box::new(replace_feature(l, slot, with)),
            Box::new(replace_feature(r, slot, with)),
            *d,
        ),
    }
}

fn bump_first_window(expr: &Expr, to: u32) -> Option<Expr> {
    match expr {
        Expr::Feature(_) | Expr::IntConst(_) | Expr::FloatConst(_) => None,
        Expr::Unary(op, c) => bump_first_window(c, to).map(|c| Expr::Unary(*op, Box::new(c))),
        Expr::Binary(op, l, r) => match bump_first_window(l, to) {
            Some(l) => Some(Expr::Binary(*op, Box::new(l), r.clone())),
            None => bump_first_window(r, to).map(|r| Expr::Binary(*op, l.clone(), Box::new(r))),
        },
        Expr::Rolling(op, c, _) => Some(Expr::Rolling(*op, c.clone(), to)),
        Expr::RollingBin(op, l, r, _) => Some(Expr::RollingBin(*op, l.clone(), r.clone(), to)),
    }
}

/// One deterministic rewrite of the parent. Keeps output inside the DSL's
/// constant and arity rules so candidates survive the screen.
fn mutate(parent: &Expr, rng: &mut ChaCha8Rng) -> (Expr, String) {
    for _ in 0..8 {
        match rng.gen_range(0..5u8) {
            0 => {
                let (text, why) = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
                return (parse(text).expect("templates parse"), why.to_string());
            }
            1 => {
                let slots = feature_slots(parent);
                if slots == 0 {
                    continue;
                }
                let mut slot = rng.gen_range(0..slots);
                let with = *Feature::ALL.choose(rng).expect("non-empty");
                let mutated = replace_feature(parent, &mut slot, with);
                if &mutated != parent {
                    let why = format!(
                        "Rewrites the parent signal onto the {} series to test feature sensitivity",
                        with.name()
                    );
                    return (mutated, why);
                }
            }
            2 => {
                return (
                    Expr::Unary(crate::expr::UnaryOp::Rank, Box::new(parent.clone())),
                    "Cross-sectional rank of the parent signal, removing per-asset scale".into(),
                );
            }
            3 => {
                return (
                    Expr::Rolling(crate::expr::RollingOp::TsMean, Box::new(parent.clone()), 5),
                    "Five-day smoothing of the parent signal to damp daily noise".into(),
                );
            }
            4 => {
                let to = *[3u32, 5, 10, 20].choose(rng).expect("non-empty");
                if let Some(mutated) = bump_first_window(parent, to) {
                    if &mutated != parent {
                        let why = format!(
                            "Retunes the parent's first rolling window to {to} days to probe horizon sensitivity"
                        );
                        return (mutated, why);
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    // rng kept refusing (e.g. constant-only parent); fall back to a template
    let (text, why) = TEMPLATES[0];
    (parse(text).expect("template parses"), why.to_string())
}

/// 256-bucket feature-hashing embedder over lowercase alphanumeric tokens,
/// signed by one hash bit and L2-normalized.
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: Self::DEFAULT_DIM,
        }
    }

    fn token_hash(&self, token: &str) -> u64 {
        // FNV-1a folded with the seed; stable across platforms.
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for b in self.seed.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut acc = vec![0.0f64; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = self.token_hash(&token.to_lowercase());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        if acc.iter().all(|v| *v == 0.0) {
            // punctuation-only text or full cancellation: fall back to one
            // whole-text bucket so the vector stays usable and deterministic
            let h = self.token_hash(text);
            acc[(h % self.dim as u64) as usize] = 1.0;
        }
        EmbeddingVector::new(acc)
    }

    fn name(&self) -> &'static str {
        "hash-embed"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec_request(parent: &str, m: usize) -> ChatRequest {
        ChatRequest {
            system: "system".into(),
            user: format!(
                "... \"expressions_fixed\" ... The length of expressions should be {m}.\n\
                 Given expressions: {parent}\n"
            ),
            temperature: 0.7,
            max_tokens: None,
        }
    }

    #[test]
    fn scripted_chat_replays_in_order() {
        let chat = ScriptedChat::new(vec!["one".into(), "two".into()]);
        let req = exec_request("$close", 5);
        assert_eq!(chat.chat(&req).unwrap().raw, "one");
        assert_eq!(chat.chat(&req).unwrap().raw, "two");
        assert!(chat.chat(&req).is_err());
    }

    #[test]
    fn mutator_is_deterministic_and_parseable() {
        let chat = MutatorChat::new(7);
        let req = exec_request("Div($open, $close)", 5);
        let a = chat.chat(&req).unwrap();
        let b = chat.chat(&req).unwrap();
        assert_eq!(a.raw, b.raw);
        let json = a.json.expect("mock emits strict json");
        let exprs = json["expressions"].as_array().unwrap();
        assert_eq!(exprs.len(), 5);
        for e in exprs {
            parse(e.as_str().unwrap()).expect("mutator output parses");
        }
        assert_eq!(json["expressions_fixed"], json["expressions"]);
        assert_eq!(json["explanations"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn mutator_strategy_stage() {
        let chat = MutatorChat::new(7);
        let req = ChatRequest {
            system: "system".into(),
            user: "... \"strategies\" ... The length of expressions should be 5.\n\
                   Given expressions: $close\n"
                .into(),
            temperature: 0.7,
            max_tokens: None,
        };
        let resp = chat.chat(&req).unwrap();
        let json = resp.json.unwrap();
        assert!(json["strategies"].as_array().unwrap().len() >= 5);
    }

    #[test]
    fn different_seeds_differ() {
        let req = exec_request("Div($open, $close)", 5);
        let a = MutatorChat::new(1).chat(&req).unwrap().raw;
        let b = MutatorChat::new(2).chat(&req).unwrap().raw;
        assert_ne!(a, b);
    }

    #[test]
    fn hash_embedder_is_deterministic_unit_norm() {
        let e = HashEmbedder::new(42);
        let a = e.embed("momentum of daily range").unwrap();
        let b = e.embed("momentum of daily range").unwrap();
        assert_eq!(a, b);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn token_disjoint_texts_are_orthogonal() {
        // chosen so the four tokens hash into four distinct buckets
        let e = HashEmbedder::new(11);
        let a = e.embed("alpha beta").unwrap();
        let b = e.embed("gamma delta").unwrap();
        let buckets: Vec<usize> = ["alpha", "beta", "gamma", "delta"]
            .iter()
            .map(|t| (e.token_hash(t) % e.dim as u64) as usize)
            .collect();
        let mut unique = buckets.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 4, "collision-free seed check");
        assert_eq!(a.cosine(&b), 0.0);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(
            HashEmbedder::new(1).embed(""),
            Err(ProviderError::EmptyInput)
        ));
    }
}
