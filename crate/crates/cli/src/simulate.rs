use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use fabcap_core::sim::{FabState, MIN_PER_DAY};
use fabcap_core::Window;
use serde::{Deserialize, Serialize};

use crate::common::{load_scenario, output_dir, write_csv, CliResult, ManifestBuilder};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value = "minifab")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub scenario_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decision periods to simulate; warm-up plus horizon by default.
    #[arg(long)]
    pub periods: Option<usize>,
    /// Write every processed event to events.log.
    #[arg(long)]
    pub dump_events: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KpiRow {
    /// `period` for each decision period, `total` for the whole run.
    pub scope: String,
    pub start_day: f64,
    pub end_day: f64,
    pub completed_lots: usize,
    pub avg_cycle_time_days: Option<f64>,
    pub daily_going_rate: f64,
}

#[derive(Serialize)]
struct SimConfig {
    seed: u64,
    periods: usize,
    dump_events: bool,
}

pub fn run(a: SimulateArgs, root: &Path, argv: &[String]) -> CliResult<()> {
    let manifest = ManifestBuilder::start("simulate", argv);
    let scenario = load_scenario(&a.scenario, a.scenario_seed)?;
    let dir = output_dir(a.out.clone(), root, "simulate", a.seed)?;
    let periods = a.periods.unwrap_or(scenario.warmup_periods + scenario.horizon_periods);
    let period = scenario.decision_period_min;

    let mut fab = FabState::new(scenario.clone(), a.seed);
    if a.dump_events {
        fab.enable_event_log();
    }
    let mut log = if a.dump_events { Some(std::io::BufWriter::new(std::fs::File::create(dir.join("events.log"))?)) } else { None };
    let mut rows = Vec::with_capacity(periods + 1);
    let mut events = 0u64;
    let clock = Instant::now();
    for p in 0..periods {
        let (start, end) = (p as f64 * period, (p + 1) as f64 * period);
        while fab.step_event(end).is_some() {
            events += 1;
        }
        fab.advance(end);
        if let Some(w) = log.as_mut() {
            for line in fab.take_event_log() {
                writeln!(w, "{line}")?;
            }
        }
        let k = fab.kpi_report(Window::new(start, end));
        rows.push(KpiRow {
            scope: "period".into(),
            start_day: start / MIN_PER_DAY,
            end_day: end / MIN_PER_DAY,
            completed_lots: k.completed_lots,
            avg_cycle_time_days: k.avg_cycle_time_days,
            daily_going_rate: k.daily_going_rate,
        });
    }
    let elapsed = clock.elapsed().as_secs_f64();
    if let Some(mut w) = log {
        w.flush()?;
    }
    if periods > 0 {
        let end = periods as f64 * period;
        let k = fab.kpi_report(Window::new(0.0, end));
        rows.push(KpiRow {
            scope: "total".into(),
            start_day: 0.0,
            end_day: end / MIN_PER_DAY,
            completed_lots: k.completed_lots,
            avg_cycle_time_days: k.avg_cycle_time_days,
            daily_going_rate: k.daily_going_rate,
        });
    }
    write_csv(&dir.join("kpi.csv"), &rows)?;
    let rate = if elapsed > 0.0 { events as f64 / elapsed } else { f64::INFINITY };
    println!("{events} events in {elapsed:.3} s ({rate:.0} events/s)");
    if let Some(t) = rows.last() {
        println!(
            "completed lots {}  cycle time {}  DGR {:.3}",
            t.completed_lots,
            t.avg_cycle_time_days.map_or("n/a".into(), |c| format!("{c:.3} d")),
            t.daily_going_rate
        );
    }
    manifest.finish(&dir, &a.scenario, &scenario, SimConfig { seed: a.seed, periods, dump_events: a.dump_events }, vec![a.seed])
}
