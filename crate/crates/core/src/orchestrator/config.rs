//! Mining configuration: hyperparameters, data splits, provider settings,
//! and seed expressions. Loaded from JSON; every field has a default so a
//! config file only states what it overrides.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::BacktestConfig;
use crate::expr::{parse, DEFAULT_FLOAT_WHITELIST};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl SplitRange {
    pub fn all_time() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(1900, 1, 1).expect("valid"),
            end: NaiveDate::from_ymd_opt(2999, 12, 31).expect("valid"),
        }
    }
}

/// Train / validation / test date ranges, inclusive on both ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train: SplitRange,
    pub valid: Option<SplitRange>,
    pub test: Option<SplitRange>,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: SplitRange::all_time(),
            valid: None,
            test: None,
        }
    }
}

impl Splits {
    /// Present splits in canonical order with their names.
    pub fn named(&self) -> Vec<(&'static str, SplitRange)> {
        let mut out = vec![("train", self.train)];
        if let Some(v) = self.valid {
            out.push(("valid", v));
        }
        if let Some(t) = self.test {
            out.push(("test", t));
        }
        out
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let ranges = self.named();
        for (name, r) in &ranges {
            if r.start > r.end {
                return Err(ConfigError::Invalid(format!(
                    "{name} split starts after it ends"
                )));
            }
        }
        for pair in ranges.windows(2) {
            let (a_name, a) = pair[0];
            let (b_name, b) = pair[1];
            if a.end >= b.start {
                return Err(ConfigError::Invalid(format!(
                    "splits must be ordered and non-overlapping: {a_name} ends {} but {b_name} starts {}",
                    a.end, b.start
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic offline mutation model; seeded by `rng_seed`.
    MockMutator,
    /// OpenAI-compatible HTTP endpoints.
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    /// Credential in the config file; the environment variable named by
    /// `api_key_env` overrides it when set.
    pub api_key: Option<String>,
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
    pub transport_retries: usize,
    /// Re-asks for unparseable JSON bodies.
    pub json_attempts: usize,
    /// Upper bound on concurrent provider calls.
    pub in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::MockMutator,
            endpoint: None,
            api_key: None,
            api_key_env: "ALPHAMINE_API_KEY".into(),
            chat_model: "chat-default".into(),
            embedding_model: "embedding-default".into(),
            temperature: 0.7,
            max_tokens: Some(4096),
            timeout_secs: 60,
            transport_retries: 3,
            json_attempts: 3,
            in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSettings {
    pub window: usize,
    pub threshold: f64,
    pub rebalance_every: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            window: 60,
            threshold: 0.01,
            rebalance_every: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSpec {
    pub expr: String,
    pub topic: String,
    #[serde(default)]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Depth penalty base in the retrieval prior.
    pub gamma: f64,
    /// Retrieval penalty base in the retrieval prior.
    pub omega: f64,
    /// Active pool capacity.
    pub capacity: usize,
    /// Length threshold (total AST nodes) for candidate expressions.
    pub max_len: usize,
    /// Strategies and candidate expressions requested per parent (m).
    pub strategies_per_parent: usize,
    /// Parents selected per iteration (k).
    pub parents_per_iteration: usize,
    /// Admission quality bar.
    pub tau_quality: f64,
    /// Admission correlation ceiling for the novelty branch.
    pub tau_diversity: f64,
    /// Loop iteration budget.
    pub iterations: u32,
    /// Early stop after this many consecutive zero-admission iterations.
    pub stagnation_patience: u32,
    /// Forward-return horizon in trading days.
    pub forward_horizon: usize,
    /// Minimum valid asset pairs per date for correlations.
    pub min_assets: usize,
    pub float_whitelist: Vec<f64>,
    pub rng_seed: u64,
    pub splits: Splits,
    pub integrator: IntegratorSettings,
    pub backtest: BacktestConfig,
    pub provider: ProviderConfig,
    pub seeds: Vec<SeedSpec>,
    /// Write per-iteration retrieval scores to scores.csv.
    pub dump_scores: bool,
    /// Write every assembled prompt under prompts/.
    pub dump_prompts: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            omega: 0.10,
            capacity: 50,
            max_len: 40,
            strategies_per_parent: 5,
            parents_per_iteration: 3,
            tau_quality: 0.10,
            tau_diversity: 0.70,
            iterations: 10,
            stagnation_patience: 10,
            forward_horizon: 20,
            min_assets: 2,
            float_whitelist: DEFAULT_FLOAT_WHITELIST.to_vec(),
            rng_seed: 0,
            splits: Splits::default(),
            integrator: IntegratorSettings::default(),
            backtest: BacktestConfig::default(),
            provider: ProviderConfig::default(),
            seeds: Vec::new(),
            dump_scores: false,
            dump_prompts: false,
        }
    }
}

impl MiningConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: MiningConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.omega) {
            return bad("gamma and omega must lie in [0, 1)");
        }
        if self.capacity < 1 {
            return bad("capacity must be >= 1");
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1");
        }
        if self.strategies_per_parent < 1 {
            return bad("strategies_per_parent must be >= 1");
        }
        if self.parents_per_iteration < 1 {
            return bad("parents_per_iteration must be >= 1");
        }
        if self.tau_quality <= 0.0 {
            return bad("tau_quality must be positive");
        }
        if !(self.tau_diversity > 0.0 && self.tau_diversity <= 1.0) {
            return bad("tau_diversity must lie in (0, 1]");
        }
        if self.forward_horizon < 1 {
            return bad("forward_horizon must be >= 1");
        }
        if self.integrator.window < 5 {
            return bad("integrator.window must be >= 5");
        }
        if self.integrator.rebalance_every < 1 {
            return bad("integrator.rebalance_every must be >= 1");
        }
        if !(self.backtest.top_frac > 0.0 && self.backtest.top_frac <= 1.0) {
            return bad("backtest.top_frac must lie in (0, 1]");
        }
        if self.backtest.hold < 1 {
            return bad("backtest.hold must be >= 1");
        }
        self.splits.validate()?;
        for seed in &self.seeds {
            parse(&seed.expr).map_err(|e| {
                ConfigError::Invalid(format!("seed expression '{}': {e}", seed.expr))
            })?;
        }
        Ok(())
    }

    /// Resolve the chat credential: environment first, config second.
    pub fn resolved_api_key(&self) -> Option<String> {
        std::env::var(&self.provider.api_key_env)
            .ok()
            .filter(|v| !v.is_empty())
            .or_else(|| self.provider.api_key.clone())
    }
}
