//! The closed mining loop, run artifacts, checkpointing, and resume.

pub mod config;
mod run;

pub use config::{
    ConfigError, IntegratorSettings, MiningConfig, ProviderConfig, ProviderKind, SeedSpec,
    SplitRange, Splits,
};
pub use run::{
    build_providers, load_graph_flexible, resume, run_mining, Checkpoint, IterationRecord,
    MiningOutcome, OrchestratorError, PoolEntry, Providers, RunReport, RunStatus, SplitReport,
    CHECKPOINT_SCHEMA_VERSION,
};
