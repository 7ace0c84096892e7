use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use oneaudit_core::betting::expected_log_growth;
use oneaudit_core::{kelly_bet_bisection, AssorterPopulation, SamplingMode};
use oneaudit_sim::presets::{DEFAULT_ALPHA, DEFAULT_SEED};
use oneaudit_sim::{
    build_population, preset, run_scenarios, table_emit, Method, PopulationSpec, SamplingDesign,
    Scenario, SimulationConfig, SimulationReport,
};
use serde::Deserialize;

use crate::files::{
    read_json, read_population_values, write_cards, write_json, write_population, GeneratedFiles,
    Manifest,
};
use crate::service::{self, DEFAULT_ADDR};
use crate::session::{AuditSession, SessionStatus, SessionStore, SessionStrategy, StartRequest};
use crate::terminal::run_terminal;

#[derive(Debug, Parser)]
#[command(
    name = "oneaudit",
    version,
    about = "ONEAudit risk-limiting audits: simulation and live sessions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic election: cards.csv, population.csv, manifest.json.
    Generate(GenerateArgs),
    /// Run stopping-time simulations and write a CSV report.
    Simulate(SimulateArgs),
    /// Kelly-optimal bet for a population file.
    Kelly(KellyArgs),
    /// Conduct an audit interactively at the terminal.
    Audit(AuditArgs),
    /// Serve audit sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Population spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named preset: table1, table1-<mean>[-<across>-<within>], table2-desk,
    /// table2-spot, table2-full.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Simulation config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub cap: Option<usize>,
    /// Comma-separated strategy names; replaces the configured list.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Option<Vec<Method>>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KellyArgs {
    /// CSV with a `value` column.
    pub population: PathBuf,
    /// Null mean to bet against.
    #[arg(long)]
    pub eta: f64,
    /// Upper bound of the values.
    #[arg(long, default_value_t = 1.0)]
    pub upper: f64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Cards CSV (`card_id,batch_id,vote`).
    #[arg(long)]
    pub cards: PathBuf,
    #[arg(long, default_value = "apriori_kelly")]
    pub strategy: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Sample with replacement instead of without.
    #[arg(long)]
    pub with_replacement: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = DEFAULT_ADDR)]
    pub addr: SocketAddr,
    /// Directory for the per-session entry logs; existing logs are replayed.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a.spec, &a.out, a.seed).map(|_| ()),
        Command::Simulate(a) => {
            let reports = cmd_simulate(&a)?;
            eprintln!("wrote {} rows to {}", reports.len(), a.out.display());
            Ok(())
        }
        Command::Kelly(a) => {
            let (bet, growth) = cmd_kelly(&a.population, a.eta, a.upper)?;
            println!("lambda* = {bet:.6}");
            println!("expected log growth = {growth:.6}");
            Ok(())
        }
        Command::Audit(a) => cmd_audit(&a),
        Command::Serve(a) => cmd_serve(a),
    }
}

pub fn cmd_generate(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Manifest> {
    let mut spec: PopulationSpec = read_json(spec_path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let generated = build_population(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let files = GeneratedFiles::in_dir(out);
    write_cards(&files.cards, &generated)?;
    write_population(&files.population, &generated)?;
    let manifest = Manifest::for_population(&generated);
    write_json(&files.manifest, &manifest)?;
    Ok(manifest)
}

/// A config file names a preset or spells out one scenario.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetConfig {
    preset: String,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    population: PopulationSpec,
    replications: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_seed")]
    seed: u64,
    /// Defaults to sampling without replacement up to N.
    #[serde(default)]
    design: Option<SamplingDesign>,
    strategies: Vec<StrategyEntry>,
}

/// `"agrapa"` or `{"kind": "universal_portfolio", "grid_size": 50}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StrategyEntry {
    Name(String),
    Method(Method),
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn named_preset(name: &str, seed: u64) -> Result<Vec<Scenario>> {
    preset(name, seed).ok_or_else(|| anyhow!("unknown preset `{name}`"))
}

/// Scenarios described by a config file.
pub fn load_config(path: &Path) -> Result<Vec<Scenario>> {
    let value: serde_json::Value = read_json(path)?;
    let ctx = || format!("{}: invalid config", path.display());
    if value.get("preset").is_some() {
        let c: PresetConfig = serde_json::from_value(value).with_context(ctx)?;
        return named_preset(&c.preset, c.seed.unwrap_or(DEFAULT_SEED));
    }
    let c: ScenarioConfig = serde_json::from_value(value).with_context(ctx)?;
    let strategies = c
        .strategies
        .into_iter()
        .map(|s| match s {
            StrategyEntry::Name(name) => name.parse().map_err(|e: String| anyhow!(e)),
            StrategyEntry::Method(m) => Ok(m),
        })
        .collect::<Result<Vec<Method>>>()
        .with_context(ctx)?;
    let design = c
        .design
        .unwrap_or_else(|| SamplingDesign::without_replacement(c.population.total_cards()));
    Ok(vec![Scenario {
        population: c.population,
        config: SimulationConfig {
            replications: c.replications,
            alpha: c.alpha,
            master_seed: c.seed,
            design,
            strategies,
        },
    }])
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<SimulationReport>> {
    let mut scenarios = match (&a.preset, &a.config) {
        (Some(name), None) => named_preset(name, a.seed.unwrap_or(DEFAULT_SEED))?,
        (None, Some(path)) => load_config(path)?,
        _ => bail!("give exactly one of --preset and --config"),
    };
    for s in &mut scenarios {
        let c = &mut s.config;
        if let Some(reps) = a.reps {
            c.replications = reps;
        }
        if let Some(seed) = a.seed {
            c.master_seed = seed;
        }
        if let Some(alpha) = a.alpha {
            c.alpha = alpha;
        }
        if let Some(cap) = a.cap {
            c.design.cap = cap;
        }
        if let Some(strategies) = &a.strategy {
            c.strategies = strategies.clone();
        }
        for m in &mut c.strategies {
            if let Some(g) = a.grid_size {
                *m = m.with_grid_size(g);
            }
            if let Some(b) = a.bands {
                *m = m.with_bands(b);
            }
        }
        c.validate(s.population.total_cards())?;
    }
    let reports = run_scenarios(&scenarios)?;
    table_emit(&reports, &a.out)?;
    Ok(reports)
}

/// Kelly bet and its expected log growth for the values in `path`.
pub fn cmd_kelly(path: &Path, eta: f64, upper: f64) -> Result<(f64, f64)> {
    let (values, _) = read_population_values(path)?;
    let pop =
        AssorterPopulation::new(values, eta, upper).with_context(|| path.display().to_string())?;
    let bet = kelly_bet_bisection(&pop, eta);
    Ok((bet, expected_log_growth(pop.values(), eta, bet)))
}

fn cmd_audit(a: &AuditArgs) -> Result<()> {
    let request = StartRequest {
        cards: None,
        cards_path: Some(a.cards.clone()),
        strategy: SessionStrategy::Named(a.strategy.clone()),
        alpha: a.alpha,
        seed: a.seed,
        cap: a.cap,
        sampling: Some(if a.with_replacement {
            SamplingMode::WithReplacement
        } else {
            SamplingMode::WithoutReplacement
        }),
        grid_size: a.grid_size,
    };
    let mut session = AuditSession::start(format!("{:016x}", a.seed), request)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let status = run_terminal(&mut session, stdin.lock(), stdout.lock())?;
    std::io::stdout().flush()?;
    if status == SessionStatus::EscalateFullCount {
        std::process::exit(2);
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let store = match &a.log_dir {
        Some(dir) => SessionStore::with_log_dir(dir)?,
        None => SessionStore::new(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(a.addr, Arc::new(store)))?;
    Ok(())
}
