//! Budgeted subset selection per head: targets are drawn one at a time
//! without replacement, each draw renormalizing the scores over what is
//! still feasible (Plackett-Luce). The same rule defines the log-probability
//! used for the policy gradient.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{Forward, PolicyNet};
use crate::action::{ActionSet, Head};
use crate::autodiff::{Tape, Var};
use crate::features::HeteroGraph;

/// A sampled action set together with the critic's estimate for the state.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub actions: ActionSet,
    pub value: f64,
}

/// Feasible candidates for the next draw of `head` after `drawn`.
///
/// Removals keep at least one dedicated machine per operation, counting the
/// removals already drawn.
pub fn head_support(head: Head, g: &HeteroGraph, drawn: &[usize]) -> Vec<usize> {
    let mask = g.masks.head(head.index());
    let mut taken = vec![false; mask.len()];
    for &d in drawn {
        taken[d] = true;
    }
    if head != Head::Remove {
        return (0..mask.len()).filter(|&i| mask[i] && !taken[i]).collect();
    }
    let mut left = vec![0usize; g.num_ops()];
    for (e, &(o, _)) in g.om_edges.iter().enumerate() {
        if g.om_dedicated[e] {
            left[o] += 1;
        }
    }
    for &d in drawn {
        left[g.om_edges[d].0] -= 1;
    }
    (0..mask.len())
        .filter(|&e| mask[e] && !taken[e] && left[g.om_edges[e].0] > 1)
        .collect()
}

/// Sequential weighted draws without replacement; `weights` must be positive.
pub fn sample_draws(weights: &[Vec<f64>; 4], g: &HeteroGraph, sigma: [usize; 4], rng: &mut impl Rng) -> [Vec<usize>; 4] {
    std::array::from_fn(|h| {
        let head = Head::ALL[h];
        let mut drawn = Vec::with_capacity(sigma[h]);
        while drawn.len() < sigma[h] {
            let support = head_support(head, g, &drawn);
            if support.is_empty() {
                if drawn.is_empty() {
                    log::debug!("{} head has no feasible target; skipped", head.name());
                }
                break;
            }
            let w: Vec<f64> = support.iter().map(|&i| weights[h][i]).collect();
            let pick = WeightedIndex::new(&w).expect("positive weights").sample(rng);
            drawn.push(support[pick]);
        }
        drawn
    })
}

/// Top-σ per head, ties to the lowest index, honouring the same support rule.
pub fn greedy_draws(weights: &[Vec<f64>; 4], g: &HeteroGraph, sigma: [usize; 4]) -> [Vec<usize>; 4] {
    std::array::from_fn(|h| {
        let head = Head::ALL[h];
        let mut drawn = Vec::with_capacity(sigma[h]);
        while drawn.len() < sigma[h] {
            let support = head_support(head, g, &drawn);
            let mut best: Option<usize> = None;
            for &i in &support {
                if best.is_none_or(|b| weights[h][i] > weights[h][b]) {
                    best = Some(i);
                }
            }
            match best {
                Some(b) => drawn.push(b),
                None => break,
            }
        }
        drawn
    })
}

/// Per-head log-probability of an ordered draw sequence.
pub fn logprob_values(probs: &[Vec<f64>; 4], g: &HeteroGraph, draws: &[Vec<usize>; 4]) -> [f64; 4] {
    std::array::from_fn(|h| {
        let head = Head::ALL[h];
        let d = &draws[h];
        let num: f64 = d.iter().map(|&i| probs[h][i].ln()).sum();
        let den: f64 = (0..d.len())
            .map(|k| head_support(head, g, &d[..k]).iter().map(|&i| probs[h][i]).sum::<f64>().ln())
            .sum();
        num - den
    })
}

/// Joint log-probability of `draws` recorded on the tape.
pub fn tape_logprob(tape: &mut Tape, probs: &[Var; 4], g: &HeteroGraph, draws: &[Vec<usize>; 4]) -> Var {
    let mut heads = Vec::new();
    for h in 0..4 {
        let d = &draws[h];
        if d.is_empty() {
            continue;
        }
        let picked = tape.gather_rows(probs[h], d.clone());
        let logs = tape.log(picked);
        let num = tape.sum(logs);
        let mut dens = Vec::with_capacity(d.len());
        for k in 0..d.len() {
            let support = head_support(Head::ALL[h], g, &d[..k]);
            let rows = tape.gather_rows(probs[h], support);
            let total = tape.sum(rows);
            dens.push(tape.log(total));
        }
        let dens = tape.concat_cols(&dens);
        let den = tape.sum(dens);
        heads.push(tape.sub(num, den));
    }
    if heads.is_empty() {
        return tape.constant(crate::autodiff::Tensor::scalar(0.0));
    }
    let all = tape.concat_cols(&heads);
    tape.sum(all)
}

/// Builds the action set for `draws`, mapping edge indices to `(machine, op)`.
pub fn actions_from_draws(g: &HeteroGraph, draws: [Vec<usize>; 4], head_logprobs: [f64; 4]) -> ActionSet {
    let pair = |e: usize| (g.om_edges[e].1, g.om_edges[e].0);
    ActionSet {
        u_targets: draws[0].clone(),
        r_targets: draws[1].clone(),
        ded_adds: draws[2].iter().map(|&e| pair(e)).collect(),
        ded_removes: draws[3].iter().map(|&e| pair(e)).collect(),
        joint_logprob: head_logprobs.iter().sum(),
        head_logprobs,
        draws,
    }
}

impl PolicyNet {
    /// Samples (or, when `greedy`, picks the top) action set for a graph.
    pub fn act(&self, g: &HeteroGraph, sigma: [usize; 4], rng: &mut impl Rng, greedy: bool) -> Decision {
        let eval = self.evaluate(g);
        let draws = if greedy { greedy_draws(&eval.probs, g, sigma) } else { sample_draws(&eval.probs, g, sigma, rng) };
        let lps = logprob_values(&eval.probs, g, &draws);
        Decision { actions: actions_from_draws(g, draws, lps), value: eval.value }
    }

    /// Joint log-probability of previously drawn targets under the current parameters.
    pub fn logprob(&self, tape: &mut Tape, fwd: &Forward, g: &HeteroGraph, draws: &[Vec<usize>; 4]) -> Var {
        tape_logprob(tape, &fwd.probs, g, draws)
    }
}
