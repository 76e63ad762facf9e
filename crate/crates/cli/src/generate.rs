use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fabcap_core::scenario::{generate_synthetic, GeneratorSpec};
use fabcap_core::Scenario;

use crate::common::{CliError, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Minifab,
    Midfab,
    Smt2020,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "midfab")]
    pub preset: Preset,
    /// Generator settings in TOML; replaces the preset.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub machines: Option<usize>,
    #[arg(long)]
    pub operations: Option<usize>,
    #[arg(long)]
    pub load_factor: Option<f64>,
    /// Scenario file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: GenerateArgs) -> CliResult<()> {
    let scenario = match (&a.spec, a.preset) {
        (None, Preset::Minifab) => Scenario::minifab(),
        (spec, preset) => {
            let mut g = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("generator spec {}: {e}", p.display())))?
                }
                None if matches!(preset, Preset::Smt2020) => GeneratorSpec::smt2020_shape(),
                None => GeneratorSpec::midfab(),
            };
            if let Some(m) = a.machines {
                g.machines = m;
            }
            if let Some(o) = a.operations {
                g.total_operations = Some(o);
            }
            if let Some(l) = a.load_factor {
                g.load_factor = l;
            }
            generate_synthetic(&g, a.seed)?
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    scenario.save(&a.out)?;
    println!(
        "{}: {} machines, {} operations, {} products, hash {}",
        a.out.display(),
        scenario.num_machines(),
        scenario.num_operations(),
        scenario.num_products(),
        scenario.content_hash()
    );
    Ok(())
}
