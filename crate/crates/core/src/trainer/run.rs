//! Epoch loop, validation, checkpoints and resumption.

use std::fs::{File, OpenOptions};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logs::{ActionRow, MetricsRow};
use super::{ppo_update, rollout_step, Baseline, Experience, LossStats, RewardMode, TrainConfig, TrainError};
use crate::action::Head;
use crate::autodiff::Adam;
use crate::eval::{derive_seed, eval_seeds, evaluate, Strategy};
use crate::features::{extract_graph, FeatureNormalizer, HeteroGraph};
use crate::policy::{Checkpoint, PolicyConfig, PolicyNet};
use crate::scenario::Scenario;
use crate::sim::{FabState, Window};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ACTIONS_FILE: &str = "actions.csv";
pub const STATE_FILE: &str = "trainer_state.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Optimizer and schedule state needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub scenario_hash: String,
    pub epochs_done: usize,
    pub adam: Adam,
    pub ema: Vec<Option<f64>>,
    pub best_val_dgr: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Step rows in (env, step) order followed by the epoch row.
    pub rows: Vec<MetricsRow>,
    pub actions: Vec<ActionRow>,
    pub stats: LossStats,
    pub val_dgr: Option<f64>,
    pub improved: bool,
    /// Set when a non-finite loss stopped the epoch's remaining updates.
    pub aborted: Option<String>,
}

impl EpochSummary {
    pub fn epoch_row(&self) -> &MetricsRow {
        self.rows.last().expect("epoch row")
    }
}

pub struct Trainer {
    scenario: Arc<Scenario>,
    hash: String,
    pub config: TrainConfig,
    pub net: PolicyNet,
    pub normalizer: FeatureNormalizer,
    adam: Adam,
    ema: Vec<Option<f64>>,
    epochs_done: usize,
    best_val_dgr: Option<f64>,
    best_epoch: Option<usize>,
    pool: rayon::ThreadPool,
}

struct EnvSlot {
    fab: FabState,
    rng: ChaCha8Rng,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Trainer {
    pub fn new(scenario: Arc<Scenario>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let net = PolicyNet::new(
            PolicyConfig { hidden: config.hidden, layers: config.layers, ..Default::default() },
            derive_seed(config.seed, 0x1417, 0),
        );
        let adam = Adam::new(&net.params);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let steps = config.steps_per_epoch.unwrap_or(scenario.horizon_periods);
        Ok(Self {
            hash: scenario.content_hash(),
            scenario,
            net,
            normalizer: FeatureNormalizer::default(),
            adam,
            ema: vec![None; steps],
            epochs_done: 0,
            best_val_dgr: None,
            best_epoch: None,
            pool,
            config,
        })
    }

    /// Restores a run from `dir`. The scenario must hash to the recorded value.
    pub fn resume(scenario: Arc<Scenario>, config: TrainConfig, dir: &Path) -> Result<Self, TrainError> {
        let mut t = Self::new(scenario, config)?;
        let text = std::fs::read_to_string(dir.join(STATE_FILE))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| TrainError::State(e.to_string()))?;
        if state.scenario_hash != t.hash {
            return Err(TrainError::HashMismatch { expected: state.scenario_hash, found: t.hash });
        }
        let ckpt = Checkpoint::load(&dir.join(LAST_CHECKPOINT))?;
        ckpt.check_scenario(&t.hash)?;
        if ckpt.config().hidden != t.config.hidden || ckpt.config().layers != t.config.layers {
            return Err(TrainError::Config("network size differs from the checkpoint".into()));
        }
        t.net = ckpt.policy()?;
        t.normalizer = ckpt.normalizer;
        if state.ema.len() != t.ema.len() {
            return Err(TrainError::State("steps per epoch differ from the resumed run".into()));
        }
        t.adam = state.adam;
        t.ema = state.ema;
        t.epochs_done = state.epochs_done;
        t.best_val_dgr = state.best_val_dgr;
        t.best_epoch = state.best_epoch;
        Ok(t)
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn scenario_hash(&self) -> &str {
        &self.hash
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.zip(self.best_val_dgr)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.ema.len()
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.steps()
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            scenario_hash: self.hash.clone(),
            epochs_done: self.epochs_done,
            adam: self.adam.clone(),
            ema: self.ema.clone(),
            best_val_dgr: self.best_val_dgr,
            best_epoch: self.best_epoch,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.net, &self.normalizer, &self.hash)
    }

    /// Seeds of the environments used in `epoch` (1-based).
    pub fn epoch_seeds(&self, epoch: usize) -> Vec<u64> {
        (0..self.config.batch_envs as u64).map(|b| derive_seed(self.config.seed, epoch as u64, b)).collect()
    }

    /// Mean greedy-episode DGR on the fixed validation seeds.
    pub fn validation_dgr(&self) -> Option<f64> {
        if self.config.val_instances == 0 {
            return None;
        }
        let seeds = eval_seeds(derive_seed(self.config.seed, 0x7A1, 0), self.config.val_instances);
        let strategy = Strategy::Policy { net: Arc::new(self.net.clone()), normalizer: self.normalizer.clone(), greedy: true };
        let results = self.pool.install(|| evaluate(&self.scenario, &strategy, &seeds));
        mean(results.iter().map(|r| r.kpi.daily_going_rate))
    }

    /// Collects `len` steps in every environment; normalizer statistics
    /// gathered by the workers are merged in environment order.
    fn collect(&mut self, envs: &mut [EnvSlot], first_step: usize, len: usize) -> (Vec<Vec<Experience>>, Vec<HeteroGraph>) {
        let net = &self.net;
        let base = &self.normalizer;
        let ema = &self.ema;
        let mode = self.config.reward_mode;
        let force = self.config.force_empty_actions;
        let out: Vec<(Vec<Experience>, HeteroGraph, Vec<_>)> = self.pool.install(|| {
            envs.par_iter_mut()
                .enumerate()
                .map(|(b, slot)| {
                    let mut norm = base.replica();
                    let mut exps = Vec::with_capacity(len);
                    for step in first_step..first_step + len {
                        let baseline = match mode {
                            RewardMode::PairedBaseline => Baseline::Paired,
                            RewardMode::EmaBaseline => Baseline::Ema(ema[step]),
                        };
                        let mut e = rollout_step(&mut slot.fab, net, &mut norm, baseline, force, &mut slot.rng);
                        e.step = step;
                        e.env = b;
                        exps.push(e);
                    }
                    let boot = extract_graph(&slot.fab, &mut norm);
                    (exps, boot, norm.take_delta())
                })
                .collect()
        });
        let mut chunks = Vec::with_capacity(out.len());
        let mut boots = Vec::with_capacity(out.len());
        for (exps, boot, delta) in out {
            self.normalizer.merge_delta(&delta);
            chunks.push(exps);
            boots.push(boot);
        }
        (chunks, boots)
    }

    /// One epoch: fresh environments, rollouts in `n`-step chunks with a PPO
    /// update after each, then validation.
    pub fn run_epoch(&mut self) -> Result<EpochSummary, TrainError> {
        let epoch = self.epochs_done + 1;
        let period = self.scenario.decision_period_min;
        let start = self.scenario.warmup_periods.max(1) as f64 * period;
        let mut envs: Vec<EnvSlot> = self
            .epoch_seeds(epoch)
            .into_iter()
            .map(|seed| EnvSlot { fab: FabState::new(self.scenario.clone(), seed), rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xAC7, 1)) })
            .collect();
        self.pool.install(|| envs.par_iter_mut().for_each(|e| e.fab.advance(start)));

        let steps = self.steps_per_epoch();
        let mut step_rows: Vec<Vec<MetricsRow>> = vec![Vec::new(); envs.len()];
        let mut actions = Vec::new();
        let mut chunk_stats = Vec::new();
        let mut aborted = None;
        let mut first = 0;
        while first < steps {
            let len = self.config.n_steps.min(steps - first);
            let (chunks, boots) = self.collect(&mut envs, first, len);
            let stats = if aborted.is_none() {
                let cfg = self.config.clone();
                let (net, adam) = (&mut self.net, &mut self.adam);
                match self.pool.install(|| ppo_update(net, adam, &chunks, &boots, &cfg)) {
                    Ok(s) => Some(s),
                    Err(TrainError::NonFinite { k, policy, critic }) => {
                        let msg = format!("epoch {epoch}, step {first}: non-finite loss at inner epoch {k} (policy {policy}, critic {critic})");
                        log::error!("{msg}; skipping the remaining updates of this epoch");
                        aborted = Some(msg);
                        None
                    }
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            if let Some(s) = stats {
                chunk_stats.push(s);
            }
            for (b, chunk) in chunks.iter().enumerate() {
                for e in chunk {
                    step_rows[b].push(MetricsRow {
                        epoch,
                        env: Some(b),
                        step: Some(e.step),
                        reward: e.reward,
                        dgr_with: e.dgr_with,
                        dgr_without: e.dgr_without,
                        completed_lots: e.completed_lots as f64,
                        avg_cycle_time_days: e.avg_cycle_time_days,
                        policy_loss: stats.map(|s| s.policy_loss),
                        critic_loss: stats.map(|s| s.critic_loss),
                        clip_fraction: stats.map(|s| s.clip_fraction),
                    });
                    actions.extend(self.action_rows(epoch, e));
                }
            }
            first += len;
        }

        if self.config.reward_mode == RewardMode::EmaBaseline {
            let alpha = self.config.ema_alpha;
            for (t, slot) in self.ema.iter_mut().enumerate() {
                let Some(cur) = mean(step_rows.iter().map(|r| r[t].dgr_with)) else { continue };
                *slot = Some(match *slot {
                    None => cur,
                    Some(prev) => alpha * cur + (1.0 - alpha) * prev,
                });
            }
        }

        let end = envs[0].fab.clock();
        let episode: Vec<_> = envs.iter().map(|e| e.fab.kpi_report(Window::new(start, end))).collect();
        let stats = LossStats {
            policy_loss: mean(chunk_stats.iter().map(|s| s.policy_loss)).unwrap_or(f64::NAN),
            critic_loss: mean(chunk_stats.iter().map(|s| s.critic_loss)).unwrap_or(f64::NAN),
            clip_fraction: mean(chunk_stats.iter().map(|s| s.clip_fraction)).unwrap_or(f64::NAN),
            grad_norm: mean(chunk_stats.iter().map(|s| s.grad_norm)).unwrap_or(f64::NAN),
        };
        let all_steps = || step_rows.iter().flatten();
        let epoch_row = MetricsRow {
            epoch,
            env: None,
            step: None,
            reward: mean(all_steps().map(|r| r.reward)).unwrap_or(0.0),
            dgr_with: mean(episode.iter().map(|k| k.daily_going_rate)).unwrap_or(0.0),
            dgr_without: mean(all_steps().filter_map(|r| r.dgr_without)),
            completed_lots: mean(episode.iter().map(|k| k.completed_lots as f64)).unwrap_or(0.0),
            avg_cycle_time_days: mean(episode.iter().filter_map(|k| k.avg_cycle_time_days)),
            policy_loss: (!chunk_stats.is_empty()).then_some(stats.policy_loss),
            critic_loss: (!chunk_stats.is_empty()).then_some(stats.critic_loss),
            clip_fraction: (!chunk_stats.is_empty()).then_some(stats.clip_fraction),
        };
        let mut rows: Vec<MetricsRow> = step_rows.into_iter().flatten().collect();
        rows.push(epoch_row);

        self.epochs_done = epoch;
        let val_dgr = self.validation_dgr();
        let improved = match (val_dgr, self.best_val_dgr) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            self.best_val_dgr = val_dgr;
            self.best_epoch = Some(epoch);
        }
        Ok(EpochSummary { epoch, rows, actions, stats, val_dgr, improved, aborted })
    }

    fn action_rows(&self, epoch: usize, e: &Experience) -> Vec<ActionRow> {
        let s = &self.scenario;
        let row = |head: Head, m: usize, op: Option<usize>| ActionRow {
            epoch,
            step: e.step,
            head: head.name().to_string(),
            machine_id: m,
            op_id: op,
            family: s.families[s.machines[m].family].name.clone(),
        };
        let a = &e.actions;
        let mut out = Vec::with_capacity(a.len());
        out.extend(a.u_targets.iter().map(|&m| row(Head::Uptime, m, None)));
        out.extend(a.r_targets.iter().map(|&m| row(Head::Efficiency, m, None)));
        out.extend(a.ded_adds.iter().map(|&(m, o)| row(Head::Add, m, Some(o))));
        out.extend(a.ded_removes.iter().map(|&(m, o)| row(Head::Remove, m, Some(o))));
        out
    }

    /// Runs the remaining epochs, writing CSV logs, checkpoints and resume state into `dir`.
    pub fn train(&mut self, dir: &Path) -> Result<Vec<EpochSummary>, TrainError> {
        std::fs::create_dir_all(dir)?;
        let fresh = self.epochs_done == 0;
        let mut metrics = csv_writer(&dir.join(METRICS_FILE), fresh)?;
        let mut action_log = csv_writer(&dir.join(ACTIONS_FILE), fresh)?;
        if fresh {
            metrics.write_record(super::METRICS_HEADER).map_err(csv_io)?;
            action_log.write_record(super::ACTIONS_HEADER).map_err(csv_io)?;
        }
        let mut out = Vec::new();
        while self.epochs_done < self.config.epochs {
            let summary = self.run_epoch()?;
            for r in &summary.rows {
                metrics.serialize(r).map_err(csv_io)?;
            }
            for r in &summary.actions {
                action_log.serialize(r).map_err(csv_io)?;
            }
            metrics.flush()?;
            action_log.flush()?;
            let ckpt = self.checkpoint();
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            if summary.improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
            let state = serde_json::to_string(&self.state()).map_err(|e| TrainError::State(e.to_string()))?;
            std::fs::write(dir.join(STATE_FILE), state)?;
            let row = summary.epoch_row();
            log::info!(
                "epoch {} reward {:.4} dgr {:.3} lots {:.1} val {:?} policy {:.4} critic {:.4} clip {:.3}",
                summary.epoch,
                row.reward,
                row.dgr_with,
                row.completed_lots,
                summary.val_dgr,
                summary.stats.policy_loss,
                summary.stats.critic_loss,
                summary.stats.clip_fraction
            );
            out.push(summary);
        }
        Ok(out)
    }
}

fn csv_io(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e.to_string()))
}

fn csv_writer(path: &Path, fresh: bool) -> Result<csv::Writer<File>, TrainError> {
    let file = if fresh { File::create(path)? } else { OpenOptions::new().append(true).open(path)? };
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}
