use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use fabcap_core::baselines::HeuristicConfig;
use fabcap_core::eval::{eval_seeds, evaluate, format_improvement, summarize, EpisodeResult, Strategy, StrategySummary, STRATEGY_NAMES};
use fabcap_core::Scenario;
use serde::{Deserialize, Serialize};

use crate::common::{load_policy, load_scenario, output_dir, write_csv, CliError, CliResult, ManifestBuilder};
use crate::plots;

#[derive(Args, Debug)]
pub struct EvalCommon {
    #[arg(long, default_value = "minifab")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub scenario_seed: u64,
    /// Number of simulation instances, shared by every strategy.
    #[arg(long, default_value_t = 16)]
    pub instances: usize,
    /// Base of the instance seed sequence.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample policy actions instead of taking the most probable ones.
    #[arg(long)]
    pub sampled: bool,
    #[arg(long, default_value_t = 1.0)]
    pub wip_temperature: f64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Comma-separated strategy names: no_action, random, wip_heuristic, policy.
    #[arg(long, value_delimiter = ',', default_value = "no_action,random,wip_heuristic")]
    pub strategies: Vec<String>,
    /// Checkpoint for the `policy` strategy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Reference strategy for the improvement table (the first strategy when absent).
    #[arg(long, default_value = "no_action")]
    pub baseline: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceRow {
    pub strategy: String,
    pub instance: usize,
    pub seed: u64,
    pub completed_lots: usize,
    pub avg_cycle_time_days: Option<f64>,
    pub daily_going_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub strategy: String,
    pub baseline: String,
    pub completed_lots: String,
    pub avg_cycle_time_days: String,
    pub daily_going_rate: String,
}

fn instance_rows(name: &str, results: &[EpisodeResult]) -> Vec<InstanceRow> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| InstanceRow {
            strategy: name.into(),
            instance: i,
            seed: r.seed,
            completed_lots: r.kpi.completed_lots,
            avg_cycle_time_days: r.kpi.avg_cycle_time_days,
            daily_going_rate: r.kpi.daily_going_rate,
        })
        .collect()
}

fn pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn policy_strategy(path: &Path, scenario: &Scenario, sampled: bool) -> CliResult<Strategy> {
    let (net, normalizer) = load_policy(path, scenario)?;
    Ok(Strategy::Policy { net: Arc::new(net), normalizer, greedy: !sampled })
}

fn print_summary(s: &StrategySummary) {
    println!(
        "{:<14} lots {:>8.2}  cycle time {:>6.3} d  DGR {:>7.3}",
        s.strategy, s.completed_lots, s.avg_cycle_time_days, s.daily_going_rate
    );
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    instances: usize,
    seed: u64,
    greedy: bool,
    wip_temperature: f64,
    strategies: Vec<&'a str>,
    checkpoint: Option<String>,
}

pub fn run_evaluate(a: EvaluateArgs, root: &Path, argv: &[String]) -> CliResult<()> {
    let manifest = ManifestBuilder::start("evaluate", argv);
    let c = &a.common;
    let scenario = load_scenario(&c.scenario, c.scenario_seed)?;
    let strategy = policy_strategy(&a.checkpoint, &scenario, c.sampled)?;
    let dir = output_dir(c.out.clone(), root, "evaluate", c.seed)?;
    let seeds = eval_seeds(c.seed, c.instances);
    let results = pool(c.workers)?.install(|| evaluate(&scenario, &strategy, &seeds));
    write_csv(&dir.join("evaluate.csv"), &instance_rows("policy", &results))?;
    let summary = summarize("policy", &results);
    write_csv(&dir.join("summary.csv"), std::slice::from_ref(&summary))?;
    print_summary(&summary);
    let cfg = EvalConfig {
        instances: c.instances,
        seed: c.seed,
        greedy: !c.sampled,
        wip_temperature: c.wip_temperature,
        strategies: vec!["policy"],
        checkpoint: Some(a.checkpoint.display().to_string()),
    };
    manifest.finish(&dir, &c.scenario, &scenario, cfg, seeds)
}

pub fn run_compare(a: CompareArgs, root: &Path, argv: &[String]) -> CliResult<()> {
    let manifest = ManifestBuilder::start("compare", argv);
    let c = &a.common;
    if !(c.wip_temperature.is_finite() && c.wip_temperature > 0.0) {
        return Err(CliError::Config("--wip-temperature must be positive".into()));
    }
    if a.strategies.is_empty() {
        return Err(CliError::Config("no strategies given".into()));
    }
    let scenario = load_scenario(&c.scenario, c.scenario_seed)?;
    let heuristic = HeuristicConfig { wip_temperature: c.wip_temperature, ..Default::default() };
    let mut strategies = Vec::new();
    for name in &a.strategies {
        let s = match name.as_str() {
            "policy" => {
                let path = a.checkpoint.as_ref().ok_or_else(|| CliError::Config("strategy `policy` needs --checkpoint".into()))?;
                policy_strategy(path, &scenario, c.sampled)?
            }
            other => Strategy::baseline(other, heuristic).ok_or_else(|| {
                CliError::Config(format!("unknown strategy `{other}`; expected one of {}", STRATEGY_NAMES.join(", ")))
            })?,
        };
        strategies.push(s);
    }

    let dir = output_dir(c.out.clone(), root, "compare", c.seed)?;
    let seeds = eval_seeds(c.seed, c.instances);
    let runner = pool(c.workers)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for s in &strategies {
        let results = runner.install(|| evaluate(&scenario, s, &seeds));
        rows.extend(instance_rows(s.name(), &results));
        let sm = summarize(s.name(), &results);
        print_summary(&sm);
        summaries.push(sm);
    }
    // Without the requested baseline among the strategies, the first one serves.
    let base = summaries.iter().find(|s| s.strategy == a.baseline).unwrap_or(&summaries[0]);
    let improvements: Vec<ImprovementRow> = summaries
        .iter()
        .map(|s| ImprovementRow {
            strategy: s.strategy.clone(),
            baseline: base.strategy.clone(),
            completed_lots: format_improvement(s.completed_lots, base.completed_lots),
            avg_cycle_time_days: format_improvement(s.avg_cycle_time_days, base.avg_cycle_time_days),
            daily_going_rate: format_improvement(s.daily_going_rate, base.daily_going_rate),
        })
        .collect();
    write_csv(&dir.join("instances.csv"), &rows)?;
    write_csv(&dir.join("compare.csv"), &summaries)?;
    write_csv(&dir.join("improvements.csv"), &improvements)?;
    plots::comparison(&dir.join("compare.svg"), &summaries)?;
    let cfg = EvalConfig {
        instances: c.instances,
        seed: c.seed,
        greedy: !c.sampled,
        wip_temperature: c.wip_temperature,
        strategies: a.strategies.iter().map(String::as_str).collect(),
        checkpoint: a.checkpoint.as_ref().map(|p| p.display().to_string()),
    };
    manifest.finish(&dir, &c.scenario, &scenario, cfg, seeds)
}
