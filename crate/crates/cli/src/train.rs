use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use fabcap_core::trainer::{RewardMode, TrainConfig, Trainer};

use crate::common::{load_scenario, output_dir, CliError, CliResult, ManifestBuilder};
use crate::plots;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RewardArg {
    Paired,
    Ema,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Built-in scenario name (minifab, midfab, smt2020) or a TOML file.
    #[arg(long, default_value = "minifab")]
    pub scenario: String,
    /// Seed for generated built-in scenarios.
    #[arg(long, default_value_t = 0)]
    pub scenario_seed: u64,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Parallel environments per epoch.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub reward_mode: Option<RewardArg>,
    #[arg(long)]
    pub ema_alpha: Option<f64>,
    /// Decision steps per epoch (defaults to the scenario horizon).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub k_epochs: Option<usize>,
    #[arg(long)]
    pub lr_policy: Option<f64>,
    #[arg(long)]
    pub lr_critic: Option<f64>,
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub val_instances: Option<usize>,
    /// Worker threads; 1 gives the reference single-worker mode.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the run stored in this directory.
    #[arg(long, conflicts_with = "out")]
    pub resume: Option<PathBuf>,
}

/// Built-in defaults, then the config file, then flags.
pub fn resolve_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = a.$flag { c.$field = v; } )* };
    }
    set!(epochs => epochs, batch => batch_envs, seed => seed, ema_alpha => ema_alpha, n_steps => n_steps,
        k_epochs => k_epochs, lr_policy => lr_policy, lr_critic => lr_critic, entropy_coef => entropy_coef,
        hidden => hidden, layers => layers, val_instances => val_instances, workers => workers);
    if let Some(s) = a.steps {
        c.steps_per_epoch = Some(s);
    }
    if let Some(m) = a.reward_mode {
        c.reward_mode = match m {
            RewardArg::Paired => RewardMode::PairedBaseline,
            RewardArg::Ema => RewardMode::EmaBaseline,
        };
    }
    c.validate()?;
    Ok(c)
}

pub fn run(a: TrainArgs, root: &Path, argv: &[String]) -> CliResult<()> {
    let manifest = ManifestBuilder::start("train", argv);
    let cfg = resolve_config(&a)?;
    let scenario = load_scenario(&a.scenario, a.scenario_seed)?;
    let (dir, mut trainer) = match &a.resume {
        Some(d) => (d.clone(), Trainer::resume(scenario.clone(), cfg.clone(), d)?),
        None => (output_dir(a.out.clone(), root, "train", cfg.seed)?, Trainer::new(scenario.clone(), cfg.clone())?),
    };
    std::fs::write(dir.join("config.toml"), toml::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?)?;
    log::info!(
        "training on {} ({} machines, {} operations) for {} epochs into {}",
        scenario.name,
        scenario.num_machines(),
        scenario.num_operations(),
        cfg.epochs,
        dir.display()
    );
    let summaries = trainer.train(&dir)?;
    if let Some((epoch, dgr)) = trainer.best() {
        log::info!("best validation DGR {dgr:.4} at epoch {epoch}");
    }
    let aborted = summaries.iter().filter(|s| s.aborted.is_some()).count();
    if aborted > 0 {
        log::warn!("{aborted} epoch(s) stopped early on a non-finite loss");
    }
    plots::training_curves(&dir)?;
    plots::action_frequency(&dir)?;
    let seeds: Vec<u64> = (1..=trainer.epochs_done()).flat_map(|e| trainer.epoch_seeds(e)).collect();
    manifest.finish(&dir, &a.scenario, &scenario, &cfg, seeds)?;
    println!("{}", dir.display());
    Ok(())
}
