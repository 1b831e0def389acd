//! Command-line front end: run the mining loop, evaluate a single factor,
//! backtest a checkpointed pool's composite signal, export the factor DAG,
//! and dump a run's iteration series.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use ndarray::s;
use serde_json::json;

use alphamine::backtest::simulate;
use alphamine::engine::evaluate;
use alphamine::expr::{lint, parse, LintOptions};
use alphamine::integrator::{mega_factor, write_weights_csv, IntegratorConfig};
use alphamine::metrics::ic_suite;
use alphamine::orchestrator::{
    build_providers, load_graph_flexible, resume, run_mining, MiningConfig,
};
use alphamine::panel::{forward_returns, load_panel, OhlcPolicy, Panel};
use alphamine::util::JsonlWriter;

#[derive(Parser)]
#[command(name = "alphamine", version, about = "Closed-loop alpha-factor mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the mining loop.
    Mine(MineArgs),
    /// Evaluate one expression against forward returns and print its metrics.
    EvalFactor(EvalArgs),
    /// Build the pool's composite signal from a checkpoint and backtest it.
    Backtest(BacktestArgs),
    /// Export the factor DAG as JSON or Graphviz dot.
    ExportDag(ExportArgs),
    /// Emit the iteration-vs-pool-quality series of a finished run as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Long-form panel CSV (date,asset,open,high,low,close,vwap,volume).
    #[arg(long)]
    data: PathBuf,
    /// Resume from an existing checkpoint.json.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run directory for checkpoints, logs, and reports.
    #[arg(long, default_value = "run_out")]
    out: PathBuf,
    /// Write every assembled prompt under <out>/prompts/.
    #[arg(long)]
    dump_prompts: bool,
    /// Mask inconsistent OHLC rows to NaN instead of rejecting the file.
    #[arg(long)]
    mask_ohlc: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Expression text, e.g. "Div(Sub($open, $close), $open)".
    #[arg(long)]
    expr: String,
    #[arg(long)]
    data: PathBuf,
    /// Forward-return horizon in trading days.
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Date splits, e.g. "train=2010-01-01..2020-12-31,test=2021-01-01..2022-06-30".
    #[arg(long)]
    splits: Option<String>,
    #[arg(long, default_value_t = 2)]
    min_assets: usize,
    /// Also write the factor values as long-form CSV.
    #[arg(long)]
    values_out: Option<PathBuf>,
    /// Also write the whole-range daily correlation series as CSV.
    #[arg(long)]
    daily_out: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    /// Graph checkpoint (checkpoint.json or a bare graph document).
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional mining config for integrator/backtest settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to dates >= this.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Restrict to dates <= this.
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Where to write the wealth-curve CSV.
    #[arg(long, default_value = "backtest_curve.csv")]
    curve_out: PathBuf,
    /// Where to write the rebalance weights CSV.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_parser = ["json", "dot"], default_value = "json")]
    format: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing report.json.
    #[arg(long)]
    run: PathBuf,
}

fn read_panel(path: &Path, policy: OhlcPolicy) -> Result<Panel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_panel(BufReader::new(file), policy)?)
}

fn parse_splits(spec: &str) -> Result<Vec<(String, NaiveDate, NaiveDate)>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (name, range) = part
            .split_once('=')
            .with_context(|| format!("split '{part}' must look like name=start..end"))?;
        let (start, end) = range
            .split_once("..")
            .with_context(|| format!("range '{range}' must look like start..end"))?;
        out.push((
            name.trim().to_string(),
            start.trim().parse()?,
            end.trim().parse()?,
        ));
    }
    Ok(out)
}

fn cmd_mine(args: MineArgs) -> Result<()> {
    let mut cfg = MiningConfig::load(&args.config)?;
    cfg.dump_prompts |= args.dump_prompts;
    let policy = if args.mask_ohlc {
        OhlcPolicy::MaskToNan
    } else {
        OhlcPolicy::Reject
    };
    let panel = read_panel(&args.data, policy)?;
    std::fs::create_dir_all(&args.out)?;
    let log = Arc::new(JsonlWriter::to_file(
        &args.out.join("provider_log.jsonl"),
        args.resume.is_some(),
    )?);
    let providers = build_providers(&cfg, Some(log))?;
    let outcome = match &args.resume {
        Some(ckpt) => resume(ckpt, &cfg, &panel, providers, &args.out)?,
        None => run_mining(&cfg, &panel, providers, &args.out)?,
    };
    let summary = json!({
        "status": outcome.report.status,
        "iterations": outcome.report.iterations.len(),
        "pool_size": outcome.report.final_pool.len(),
        "candidates_evaluated": outcome.report.candidates_evaluated,
        "checkpoint": outcome.checkpoint_path,
        "report": outcome.report_path,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval_factor(args: EvalArgs) -> Result<()> {
    let expr = parse(&args.expr)?;
    let panel = read_panel(&args.data, OhlcPolicy::Reject)?;
    let returns = forward_returns(&panel, args.horizon)?;
    let factor = evaluate(&expr, &panel);
    if let Some(path) = &args.values_out {
        let file = File::create(path)?;
        alphamine::panel::write_factor_csv(&panel, factor.values.view(), BufWriter::new(file))?;
    }
    if let Some(path) = &args.daily_out {
        if let Ok(full) = ic_suite(factor.values.view(), returns.values.view(), args.min_assets) {
            let file = File::create(path)?;
            alphamine::metrics::write_daily_csv(panel.dates(), &full, BufWriter::new(file))?;
        }
    }
    let report = lint(&expr, &LintOptions::default());
    let lint_notes: Vec<String> = report
        .violations
        .iter()
        .map(|v| format!("{:?}: {}", v.severity, v.message))
        .collect();

    let splits = match &args.splits {
        Some(spec) => parse_splits(spec)?,
        None => vec![(
            "all".to_string(),
            *panel.dates().first().expect("non-empty panel"),
            *panel.dates().last().expect("non-empty panel"),
        )],
    };
    let mut split_reports = serde_json::Map::new();
    for (name, start, end) in splits {
        let rows = panel.row_range(start, end);
        if rows.is_empty() {
            split_reports.insert(name, json!({"error": "no panel dates in range"}));
            continue;
        }
        let f = factor.values.slice(s![rows.clone(), ..]);
        let r = returns.values.slice(s![rows.clone(), ..]);
        match ic_suite(f, r, args.min_assets) {
            Ok(m) => {
                split_reports.insert(name, serde_json::to_value(&m)?);
            }
            Err(e) => {
                split_reports.insert(name, json!({"error": e.to_string()}));
            }
        }
    }
    let out = json!({
        "expr": expr.render(),
        "node_count": expr.node_count(),
        "lint": lint_notes,
        "horizon": args.horizon,
        "splits": split_reports,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let (graph, _) = load_graph_flexible(&args.graph)?;
    let panel = read_panel(&args.data, OhlcPolicy::Reject)?;
    let cfg = match &args.config {
        Some(path) => MiningConfig::load(path)?,
        None => MiningConfig::default(),
    };
    let start = args
        .from
        .unwrap_or_else(|| *panel.dates().first().expect("non-empty panel"));
    let end = args
        .to
        .unwrap_or_else(|| *panel.dates().last().expect("non-empty panel"));
    let rows = panel.row_range(start, end);
    if rows.is_empty() {
        bail!("no panel dates between {start} and {end}");
    }
    let returns = forward_returns(&panel, cfg.forward_horizon)?;

    let mut member_values = Vec::new();
    for node in graph.active_nodes() {
        member_values.push((node.id, evaluate(&node.expr, &panel).values));
    }
    if member_values.is_empty() {
        bail!("the checkpoint has no active factors");
    }
    let members: Vec<_> = member_values
        .iter()
        .map(|(id, m)| (*id, m.slice(s![rows.clone(), ..])))
        .collect();
    let integ = IntegratorConfig {
        window: cfg.integrator.window,
        threshold: cfg.integrator.threshold,
        rebalance_every: cfg.integrator.rebalance_every,
        min_assets: cfg.min_assets,
    };
    let outcome = mega_factor(&members, returns.values.slice(s![rows.clone(), ..]), &integ)?;
    let result = simulate(
        outcome.values.view(),
        panel.close().slice(s![rows.clone(), ..]),
        &cfg.backtest,
    )?;
    let curve = File::create(&args.curve_out)?;
    result.write_curve_csv(&panel.dates()[rows.clone()], BufWriter::new(curve))?;
    if let Some(path) = &args.weights_out {
        write_weights_csv(
            &outcome,
            &panel.dates()[rows.clone()],
            BufWriter::new(File::create(path)?),
        )?;
    }
    let metrics = ic_suite(
        outcome.values.view(),
        returns.values.slice(s![rows.clone(), ..]),
        cfg.min_assets,
    )
    .ok();
    let out = json!({
        "members": members.len(),
        "days": rows.len(),
        "backtest": result.summary(),
        "metrics": metrics,
        "curve_csv": args.curve_out,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_export_dag(args: ExportArgs) -> Result<()> {
    let (graph, _) = load_graph_flexible(&args.graph)?;
    match args.format.as_str() {
        "json" => {
            let doc = graph.to_document();
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        "dot" => print!("{}", graph.to_dot()),
        other => bail!("unsupported format {other}"),
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let path = args.run.join("report.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text)?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "iteration,candidates_evaluated,pool_size,pool_mean_quality,pool_max_quality"
    )?;
    let iterations = report["iterations"]
        .as_array()
        .context("report.json has no iterations array")?;
    for it in iterations {
        writeln!(
            out,
            "{},{},{},{},{}",
            it["iteration"],
            it["candidates_evaluated_cum"],
            it["pool_size"],
            it["pool_mean_quality"],
            it["pool_max_quality"],
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Mine(args) => cmd_mine(args),
        Command::EvalFactor(args) => cmd_eval_factor(args),
        Command::Backtest(args) => cmd_backtest(args),
        Command::ExportDag(args) => cmd_export_dag(args),
        Command::Report(args) => cmd_report(args),
    }
}
