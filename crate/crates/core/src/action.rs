//! The bundle of capacity changes taken at one decision step.

use serde::{Deserialize, Serialize};

/// Action heads in fixed order: uptime, efficiency, dedication add,
/// dedication remove.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Uptime,
    Efficiency,
    Add,
    Remove,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Uptime, Head::Efficiency, Head::Add, Head::Remove];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Uptime => "uptime",
            Head::Efficiency => "efficiency",
            Head::Add => "dedication_add",
            Head::Remove => "dedication_remove",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    /// Machines whose availability rises by three points.
    pub u_targets: Vec<usize>,
    /// Machines whose processing times shrink to 90%.
    pub r_targets: Vec<usize>,
    /// `(machine, operation)` dedications to add.
    pub ded_adds: Vec<(usize, usize)>,
    /// `(machine, operation)` dedications to remove.
    pub ded_removes: Vec<(usize, usize)>,
    /// Sum of the per-head log-probabilities.
    pub joint_logprob: f64,
    pub head_logprobs: [f64; 4],
    /// Candidate indices per head in draw order; machine ids for the
    /// machine heads, edge indices into the candidate list for dedications.
    pub draws: [Vec<usize>; 4],
}

impl ActionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.u_targets.is_empty()
            && self.r_targets.is_empty()
            && self.ded_adds.is_empty()
            && self.ded_removes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.u_targets.len() + self.r_targets.len() + self.ded_adds.len() + self.ded_removes.len()
    }
}
