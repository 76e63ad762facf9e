//! n-step PPO over parallel fab instances.
//!
//! Each decision step forks the environment, runs the fork one period with
//! no actions and the original with the sampled actions; the reward is the
//! difference of their daily going rates. Chunks of `n` steps per
//! environment are then used for `K` clipped-surrogate epochs, with the
//! returns rebuilt from the current critic at every epoch.

mod logs;
mod run;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionSet, Head};
use crate::autodiff::{clip_global_norm, Adam, Tape, Tensor, Var};
use crate::features::{extract_graph, FeatureNormalizer, HeteroGraph};
use crate::policy::{head_support, Forward, PolicyNet};
use crate::sim::{FabState, KpiReport, Window};

pub use logs::{ActionRow, MetricsRow, ACTIONS_HEADER, METRICS_HEADER};
pub use run::{EpochSummary, Trainer, TrainerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Difference against a forked no-action twin.
    PairedBaseline,
    /// Difference against a running average of the same step's DGR over past epochs.
    EmaBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub n_steps: usize,
    pub k_epochs: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub batch_envs: usize,
    /// Decision steps per epoch; the scenario horizon when absent.
    pub steps_per_epoch: Option<usize>,
    pub epochs: usize,
    pub reward_mode: RewardMode,
    pub ema_alpha: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Greedy validation episodes after each epoch; 0 disables best-checkpoint selection.
    pub val_instances: usize,
    /// Rayon threads; 0 uses every core.
    pub workers: usize,
    /// Replace every sampled action set by the empty set.
    pub force_empty_actions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_policy: 3e-4,
            lr_critic: 1e-4,
            n_steps: 5,
            k_epochs: 20,
            clip_eps: 0.2,
            gamma: 0.99,
            batch_envs: 16,
            steps_per_epoch: None,
            epochs: 100,
            reward_mode: RewardMode::PairedBaseline,
            ema_alpha: 0.3,
            entropy_coef: 0.0,
            grad_clip_norm: 1.0,
            seed: 0,
            hidden: 64,
            layers: 1,
            val_instances: 4,
            workers: 0,
            force_empty_actions: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if self.n_steps == 0 || self.k_epochs == 0 || self.batch_envs == 0 {
            return bad("n_steps, k_epochs and batch_envs must be at least 1");
        }
        if !(self.lr_policy > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return bad("ema_alpha must lie in (0, 1]");
        }
        if !(self.grad_clip_norm > 0.0) || self.entropy_coef < 0.0 {
            return bad("grad_clip_norm must be positive and entropy_coef non-negative");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at inner epoch {k}: policy {policy}, critic {critic}")]
    NonFinite { k: usize, policy: f64, critic: f64 },
    #[error("scenario hash {found} does not match the run's {expected}")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Checkpoint(#[from] crate::policy::CheckpointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("resume state: {0}")]
    State(String),
}

/// One decision step of one environment.
#[derive(Clone, Debug)]
pub struct Experience {
    pub graph: HeteroGraph,
    pub actions: ActionSet,
    pub reward: f64,
    pub old_logprob: f64,
    pub old_value: f64,
    pub step: usize,
    pub env: usize,
    pub dgr_with: f64,
    /// The paired twin's DGR, or the running average in EMA mode (absent on its first epoch).
    pub dgr_without: Option<f64>,
    pub completed_lots: usize,
    pub avg_cycle_time_days: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    Paired,
    Ema(Option<f64>),
}

/// Applies `actions`, advances one decision period and reports the period's
/// KPIs; with `paired`, also the DGR of a no-action fork over the same period.
pub fn score_step(env: &mut FabState, actions: &ActionSet, paired: bool) -> (KpiReport, Option<f64>) {
    let t = env.clock();
    let end = t + env.scenario().decision_period_min;
    let twin = paired.then(|| env.fork());
    env.apply_action_set(actions).expect("actions respect the masks");
    env.advance(end);
    let window = Window::new(t, end);
    let without = twin.map(|mut twin| {
        twin.advance(end);
        twin.kpi_report(window).daily_going_rate
    });
    (env.kpi_report(window), without)
}

/// Samples an action set at the current decision boundary, advances one
/// period and scores it.
pub fn rollout_step(
    env: &mut FabState,
    net: &PolicyNet,
    normalizer: &mut FeatureNormalizer,
    baseline: Baseline,
    force_empty: bool,
    rng: &mut impl Rng,
) -> Experience {
    let sigma = env.scenario().sigma.as_array();
    let graph = extract_graph(env, normalizer);
    let decision = net.act(&graph, sigma, rng, false);
    let actions = if force_empty { ActionSet::empty() } else { decision.actions };
    let (kpi, paired) = score_step(env, &actions, baseline == Baseline::Paired);
    let dgr_with = kpi.daily_going_rate;
    let dgr_without = match baseline {
        Baseline::Paired => paired,
        Baseline::Ema(avg) => avg,
    };
    Experience {
        graph,
        reward: dgr_without.map_or(0.0, |b| dgr_with - b),
        old_logprob: actions.joint_logprob,
        old_value: decision.value,
        actions,
        step: 0,
        env: 0,
        dgr_with,
        dgr_without,
        completed_lots: kpi.completed_lots,
        avg_cycle_time_days: kpi.avg_cycle_time_days,
    }
}

/// Backward Bellman accumulation of one environment's chunk, starting from `bootstrap`.
pub fn compute_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Z-score with the population standard deviation, floored at 1e-8.
pub fn zscore(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    xs.iter().map(|x| (x - mean) / std).collect()
}

pub fn clipped_ratio(ratio: f64, eps: f64) -> f64 {
    ratio.clamp(1.0 - eps, 1.0 + eps)
}

/// `min(r A, clip(r) A)`.
pub fn surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(clipped_ratio(ratio, eps) * advantage)
}

/// Loss pieces of one experience, already divided by the batch size.
pub struct ExperienceLoss {
    pub total: Var,
    pub policy: f64,
    pub critic: f64,
    pub ratio: f64,
}

/// Mean Bernoulli entropy of the feasible head probabilities.
fn head_entropy(tape: &mut Tape, fwd: &Forward, g: &HeteroGraph) -> Option<Var> {
    let mut terms = Vec::new();
    for head in Head::ALL {
        let support = head_support(head, g, &[]);
        if support.is_empty() {
            continue;
        }
        let p = tape.gather_rows(fwd.probs[head.index()], support);
        let q = tape.one_minus(p);
        let lp = tape.log(p);
        let lq = tape.log(q);
        let a = tape.mul(p, lp);
        let b = tape.mul(q, lq);
        let s = tape.add(a, b);
        let m = tape.mean(s);
        terms.push(tape.scale(m, -1.0));
    }
    let first = *terms.first()?;
    let sum = terms[1..].iter().fold(first, |acc, &t| tape.add(acc, t));
    Some(tape.scale(sum, 1.0 / terms.len() as f64))
}

/// Clipped surrogate (negated, to be minimized) plus squared critic error
/// against `target`, minus the optional entropy bonus; each divided by `batch`.
#[allow(clippy::too_many_arguments)]
pub fn experience_loss(
    tape: &mut Tape,
    net: &PolicyNet,
    fwd: &Forward,
    exp: &Experience,
    advantage: f64,
    target: f64,
    cfg: &TrainConfig,
    batch: usize,
) -> ExperienceLoss {
    let inv = 1.0 / batch as f64;
    let lp = net.logprob(tape, fwd, &exp.graph, &exp.actions.draws);
    let diff = tape.add_scalar(lp, -exp.old_logprob);
    let ratio = tape.exp(diff);
    let unclipped = tape.scale(ratio, advantage);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let clipped = tape.scale(clipped, advantage);
    let surr = tape.minimum(unclipped, clipped);
    let policy = tape.scale(surr, -inv);
    let err = tape.add_scalar(fwd.value, -target);
    let sq = tape.square(err);
    let critic = tape.scale(sq, inv);
    let mut total = tape.add(policy, critic);
    if cfg.entropy_coef > 0.0 {
        if let Some(h) = head_entropy(tape, fwd, &exp.graph) {
            let bonus = tape.scale(h, -cfg.entropy_coef * inv);
            total = tape.add(total, bonus);
        }
    }
    ExperienceLoss {
        total,
        policy: tape.value(policy).item(),
        critic: tape.value(critic).item(),
        ratio: tape.value(ratio).item(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    /// Mean negated surrogate over the batch, averaged over inner epochs.
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// `K` inner epochs on a chunk: `chunks[b]` holds environment `b`'s
/// consecutive steps and `bootstrap[b]` the graph reached after them.
pub fn ppo_update(
    net: &mut PolicyNet,
    adam: &mut Adam,
    chunks: &[Vec<Experience>],
    bootstrap: &[HeteroGraph],
    cfg: &TrainConfig,
) -> Result<LossStats, TrainError> {
    assert_eq!(chunks.len(), bootstrap.len());
    let flat: Vec<&Experience> = chunks.iter().flatten().collect();
    let batch = flat.len();
    if batch == 0 {
        return Ok(LossStats::default());
    }
    let mut stats = LossStats::default();
    for k in 0..cfg.k_epochs {
        let snapshot: &PolicyNet = net;
        let mut tapes: Vec<(Tape, Forward)> = flat
            .par_iter()
            .map(|e| {
                let mut tape = Tape::new();
                let fwd = snapshot.forward(&mut tape, &e.graph);
                (tape, fwd)
            })
            .collect();
        let boot: Vec<f64> = bootstrap.par_iter().map(|g| snapshot.evaluate(g).value).collect();
        let values: Vec<f64> = tapes.iter().map(|(t, f)| t.value(f.value).item()).collect();

        let mut raw = Vec::with_capacity(batch);
        for (b, chunk) in chunks.iter().enumerate() {
            let rewards: Vec<f64> = chunk.iter().map(|e| e.reward).collect();
            raw.extend(compute_returns(&rewards, boot[b], cfg.gamma));
        }
        let targets = zscore(&raw);

        let parts: Vec<(Vec<(usize, Tensor)>, f64, f64, f64)> = tapes
            .par_iter_mut()
            .enumerate()
            .map(|(i, (tape, fwd))| {
                let adv = targets[i] - values[i];
                let l = experience_loss(tape, snapshot, fwd, flat[i], adv, targets[i], cfg, batch);
                let grads = tape.backward(l.total);
                (tape.param_grads(&grads), l.policy, l.critic, l.ratio)
            })
            .collect();

        let mut grads = net.params.zeros_like();
        let (mut pl, mut cl, mut clipped) = (0.0, 0.0, 0usize);
        for (g, p, c, ratio) in &parts {
            for (id, t) in g {
                for (dst, src) in grads[*id].data.iter_mut().zip(&t.data) {
                    *dst += src;
                }
            }
            pl += p;
            cl += c;
            if (ratio - 1.0).abs() > cfg.clip_eps {
                clipped += 1;
            }
        }
        if !pl.is_finite() || !cl.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            log::error!("non-finite PPO loss at inner epoch {k}: policy {pl}, critic {cl}");
            return Err(TrainError::NonFinite { k, policy: pl, critic: cl });
        }
        let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
        let lr_policy = cfg.lr_policy;
        let lr_critic = cfg.lr_critic;
        let critic_ids: Vec<bool> = (0..net.params.len()).map(|id| net.is_critic_param(id)).collect();
        adam.step(&mut net.params, &grads, |id| if critic_ids[id] { lr_critic } else { lr_policy });

        stats.policy_loss += pl;
        stats.critic_loss += cl;
        stats.clip_fraction += clipped as f64 / batch as f64;
        stats.grad_norm += norm;
    }
    let k = cfg.k_epochs as f64;
    stats.policy_loss /= k;
    stats.critic_loss /= k;
    stats.clip_fraction /= k;
    stats.grad_norm /= k;
    Ok(stats)
}
