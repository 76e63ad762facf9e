//! CSV rows for training metrics and the action log.

use serde::{Deserialize, Serialize};

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "env",
    "step",
    "reward",
    "dgr_with",
    "dgr_without",
    "completed_lots",
    "avg_cycle_time_days",
    "policy_loss",
    "critic_loss",
    "clip_fraction",
];

pub const ACTIONS_HEADER: [&str; 6] = ["epoch", "step", "head", "machine_id", "op_id", "family"];

/// Step rows carry `env` and `step`; the epoch summary row leaves both empty
/// and holds means over environments (episode KPIs) and over chunks (losses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env: Option<usize>,
    pub step: Option<usize>,
    pub reward: f64,
    pub dgr_with: f64,
    pub dgr_without: Option<f64>,
    pub completed_lots: f64,
    pub avg_cycle_time_days: Option<f64>,
    pub policy_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub clip_fraction: Option<f64>,
}

impl MetricsRow {
    pub fn is_epoch_row(&self) -> bool {
        self.env.is_none() && self.step.is_none()
    }
}

/// One action target; `op_id` is empty for machine-level heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRow {
    pub epoch: usize,
    pub step: usize,
    pub head: String,
    pub machine_id: usize,
    pub op_id: Option<usize>,
    pub family: String,
}
