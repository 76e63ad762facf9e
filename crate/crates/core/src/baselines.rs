//! Reference strategies sharing the policy's action interface.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ActionSet, Head};
use crate::features::HeteroGraph;
use crate::policy::{actions_from_draws, greedy_draws, head_support, logprob_values, sample_draws};
use crate::sim::FabState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub wip_temperature: f64,
    /// Measure WIP in units of the mean machine WIP (floor one lot) rather than lots.
    pub normalize: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { wip_temperature: 1.0, normalize: true }
    }
}

pub fn no_action() -> ActionSet {
    ActionSet::empty()
}

/// Uniform σ-subsets over the feasible targets of each head.
pub fn random_action(g: &HeteroGraph, sigma: [usize; 4], rng: &mut impl Rng) -> ActionSet {
    let w: [Vec<f64>; 4] = std::array::from_fn(|h| vec![1.0; g.masks.head(h).len()]);
    let draws = sample_draws(&w, g, sigma, rng);
    let lps = logprob_values(&w, g, &draws);
    actions_from_draws(g, draws, lps)
}

/// Lots queued at a machine's dedicated operations plus lots loaded on it.
pub fn machine_wip(state: &FabState) -> Vec<f64> {
    state
        .machines()
        .iter()
        .map(|m| {
            let queued: usize = m.dedicated_ops.iter().map(|&o| state.op_queue(o).len()).sum();
            (queued + m.loaded_lots().len()) as f64
        })
        .collect()
}

/// Softmax weights `exp(wip / temperature)`, shifted by the maximum for range safety.
pub fn wip_weights(wip: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature.is_finite() && temperature > 0.0, "temperature must be positive");
    let max = wip.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    wip.iter().map(|w| ((w - max) / temperature).exp()).collect()
}

/// Uptime and efficiency targets drawn by machine WIP; additions weighted by
/// the operation's WIP; removals take the least loaded dedications.
pub fn wip_heuristic(state: &FabState, g: &HeteroGraph, sigma: [usize; 4], cfg: &HeuristicConfig, rng: &mut impl Rng) -> ActionSet {
    let wip = machine_wip(state);
    let scale = if cfg.normalize {
        (wip.iter().sum::<f64>() / wip.len().max(1) as f64).max(1.0)
    } else {
        1.0
    };
    let scaled: Vec<f64> = wip.iter().map(|w| w / scale).collect();
    let mw = wip_weights(&scaled, cfg.wip_temperature);
    let op_wip: Vec<f64> = g.om_edges.iter().map(|&(o, _)| state.op_wip(o) as f64).collect();
    let add_w: Vec<f64> = op_wip.iter().map(|w| w + 1e-12).collect();
    let weights = [mw.clone(), mw, add_w, vec![1.0; g.om_edges.len()]];
    let mut draws = sample_draws(&weights, g, [sigma[0], sigma[1], sigma[2], 0], rng);
    let low = [vec![], vec![], vec![], op_wip.iter().map(|w| -w).collect()];
    draws[3] = greedy_draws(&low, g, [0, 0, 0, sigma[3]])[3].clone();
    let lps = logprob_values(&weights, g, &draws);
    actions_from_draws(g, draws, lps)
}

/// Checks an action set against the masks and budgets it was drawn under.
pub fn validate_action_set(g: &HeteroGraph, a: &ActionSet, sigma: [usize; 4]) -> Result<(), String> {
    for head in Head::ALL {
        let h = head.index();
        let d = &a.draws[h];
        if d.len() > sigma[h] {
            return Err(format!("{} head drew {} targets over budget {}", head.name(), d.len(), sigma[h]));
        }
        for k in 0..d.len() {
            if !head_support(head, g, &d[..k]).contains(&d[k]) {
                return Err(format!("{} target {} is infeasible", head.name(), d[k]));
            }
        }
    }
    let pair = |e: &usize| (g.om_edges[*e].1, g.om_edges[*e].0);
    let consistent = a.u_targets == a.draws[0]
        && a.r_targets == a.draws[1]
        && a.ded_adds == a.draws[2].iter().map(pair).collect::<Vec<_>>()
        && a.ded_removes == a.draws[3].iter().map(pair).collect::<Vec<_>>();
    if !consistent {
        return Err("targets disagree with recorded draws".into());
    }
    Ok(())
}
