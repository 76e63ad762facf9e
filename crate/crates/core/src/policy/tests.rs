use std::sync::Arc;

use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::action::Head;
use crate::autodiff::sigmoid;
use crate::features::{extract_graph, random_graph, random_permutation, ActionMasks, FeatureNormalizer};
use crate::scenario::toy;
use crate::sim::FabState;

fn small(layers: usize) -> PolicyNet {
    PolicyNet::new(PolicyConfig { hidden: 8, layers, ..PolicyConfig::default() }, 42)
}

fn by_name<'a>(net: &'a PolicyNet, name: &str) -> &'a Tensor {
    let id = (0..net.params.len()).find(|&i| net.params.name(i) == name).unwrap_or_else(|| panic!("no {name}"));
    net.params.get(id)
}

fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    (0..w.cols)
        .map(|j| {
            let s: f64 = x.iter().enumerate().map(|(i, v)| v * w.get(i, j)).sum();
            s + b.map_or(0.0, |b| b.get(0, j))
        })
        .collect()
}

fn mlp(net: &PolicyNet, name: &str, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for k in 0..3 {
        h = affine(&h, by_name(net, &format!("{name}.w{k}")), Some(by_name(net, &format!("{name}.b{k}"))));
        if k < 2 {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    h
}

/// Loop-by-loop re-implementation of the single-layer encoder.
fn reference_encode(net: &PolicyNet, g: &HeteroGraph) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = net.config.hidden;
    let p = "layer0";
    let wq = by_name(net, &format!("{p}.att.wq"));
    let wk = by_name(net, &format!("{p}.att.wk"));
    let a = by_name(net, &format!("{p}.att.a"));
    let wv = by_name(net, &format!("{p}.att.wv"));
    let ws = by_name(net, &format!("{p}.machine.wself"));
    let mb = by_name(net, &format!("{p}.machine.b"));
    let mut machines = Vec::new();
    for m in 0..g.num_machines() {
        let hm = g.machine_feats.row(m);
        let q = affine(hm, wq, None);
        let mut scores = Vec::new();
        let mut values = Vec::new();
        for (e, &(o, mm)) in g.om_edges.iter().enumerate() {
            if mm != m || !g.om_dedicated[e] {
                continue;
            }
            let mut kin = g.op_feats.row(o).to_vec();
            kin.extend_from_slice(g.om_feats.row(e));
            let k = affine(&kin, wk, None);
            let act: Vec<f64> = q.iter().zip(&k).map(|(x, y)| (x + y).tanh()).collect();
            scores.push(affine(&act, a, None)[0]);
            values.push(affine(g.op_feats.row(o), wv, None));
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        let own = affine(hm, ws, Some(mb));
        let out: Vec<f64> = (0..d)
            .map(|j| {
                let agg: f64 = scores.iter().zip(&values).map(|(s, v)| (s - mx).exp() / z * v[j]).sum();
                (own[j] + agg).tanh()
            })
            .collect();
        machines.push(out);
    }
    let d4 = g.oo_feats.cols;
    let d2 = g.op_feats.cols;
    let mut ops = Vec::new();
    for o in 0..g.num_ops() {
        let mut x = Vec::new();
        let edge_in = g.oo_edges.iter().position(|&(_, b)| b == o);
        let edge_out = g.oo_edges.iter().position(|&(a, _)| a == o);
        match g.pred[o] {
            Some(pr) => x.extend_from_slice(g.op_feats.row(pr)),
            None => x.extend(std::iter::repeat_n(0.0, d2)),
        }
        match edge_in {
            Some(e) => x.extend_from_slice(g.oo_feats.row(e)),
            None => x.extend(std::iter::repeat_n(0.0, d4)),
        }
        match g.succ[o] {
            Some(s) => x.extend_from_slice(g.op_feats.row(s)),
            None => x.extend(std::iter::repeat_n(0.0, d2)),
        }
        match edge_out {
            Some(e) => x.extend_from_slice(g.oo_feats.row(e)),
            None => x.extend(std::iter::repeat_n(0.0, d4)),
        }
        x.extend_from_slice(g.op_feats.row(o));
        let ms: Vec<usize> = g
            .om_edges
            .iter()
            .zip(&g.om_dedicated)
            .filter(|(&(oo, _), &ded)| oo == o && ded)
            .map(|(&(_, m), _)| m)
            .collect();
        for j in 0..d {
            x.push(ms.iter().map(|&m| machines[m][j]).sum::<f64>() / ms.len().max(1) as f64);
        }
        ops.push(mlp(net, &format!("{p}.op"), &x));
    }
    (machines, ops)
}

#[test]
fn encoder_matches_reference() {
    let net = small(1);
    for seed in 0..5 {
        let g = random_graph(seed, 4, 7);
        let eval = net.evaluate(&g);
        let (m, o) = reference_encode(&net, &g);
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(eval.machine_emb.get(i, j), v, epsilon = 1e-12);
            }
        }
        for (i, row) in o.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(eval.op_emb.get(i, j), v, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn single_layer_output_is_the_embedding() {
    let net = small(1);
    let g = random_graph(3, 5, 9);
    let mut tape = Tape::new();
    let f = net.forward(&mut tape, &g);
    assert_eq!(tape.value(f.machine_emb), tape.value(f.layer_machine[0]));
    assert_eq!(tape.value(f.op_emb), tape.value(f.layer_op[0]));
}

#[test]
fn multi_layer_embeddings_average_layers() {
    let net = small(3);
    let g = random_graph(4, 5, 9);
    let mut tape = Tape::new();
    let f = net.forward(&mut tape, &g);
    let m = tape.value(f.machine_emb).clone();
    for k in 0..m.len() {
        let mean: f64 = f.layer_machine.iter().map(|&v| tape.value(v).data[k]).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(m.data[k], mean, epsilon = 1e-14);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let net = small(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let g = random_graph(seed, 5, 8);
        let mp = random_permutation(&mut rng, 5);
        let op = random_permutation(&mut rng, 8);
        let a = net.evaluate(&g);
        let b = net.evaluate(&g.permuted(&mp, &op));
        for i in 0..5 {
            for j in 0..8 {
                assert_abs_diff_eq!(a.machine_emb.get(i, j), b.machine_emb.get(mp[i], j), epsilon = 1e-10);
            }
            assert_abs_diff_eq!(a.probs[0][i], b.probs[0][mp[i]], epsilon = 1e-10);
        }
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(a.op_emb.get(i, j), b.op_emb.get(op[i], j), epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-10);
    }
}

#[test]
fn value_ignores_graph_duplication() {
    let net = small(2);
    for seed in 0..5 {
        let g = random_graph(seed, 3, 6);
        let a = net.evaluate(&g).value;
        let b = net.evaluate(&g.disjoint_union(&g)).value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn zero_parameters_give_neutral_outputs() {
    let mut net = small(1);
    for id in 0..net.params.len() {
        net.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let eval = net.evaluate(&random_graph(1, 4, 5));
    assert_eq!(eval.value, 0.0);
    assert!(eval.probs.iter().flatten().all(|&p| p == 0.5));
}

#[test]
fn dedication_probabilities_are_bounded_complements() {
    let lo = sigmoid(-DEDICATION_C);
    let hi = sigmoid(DEDICATION_C);
    for seed in 0..10 {
        let mut net = PolicyNet::new(PolicyConfig { hidden: 8, layers: 1, ..PolicyConfig::default() }, seed);
        // Large weights push the scores into saturation.
        let id = (0..net.params.len()).find(|&i| net.params.name(i) == "head.dedication.wq").unwrap();
        net.params.get_mut(id).data.iter_mut().for_each(|v| *v *= 50.0);
        let e = net.evaluate(&random_graph(seed, 6, 10));
        for (a, r) in e.probs[2].iter().zip(&e.probs[3]) {
            assert_eq!(*r, 1.0 - a);
            assert!(*a >= lo && *a <= hi, "{a}");
        }
        for p in e.probs[0].iter().chain(&e.probs[1]) {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }
}

fn tiny_graph(uptime: Vec<bool>) -> HeteroGraph {
    let mut g = random_graph(0, 2, 2);
    g.masks.uptime = uptime;
    g
}

#[test]
fn single_draw_probability() {
    let g = tiny_graph(vec![true, true]);
    let probs = [vec![0.8, 0.2], vec![0.5, 0.5], vec![0.5; g.om_edges.len()], vec![0.5; g.om_edges.len()]];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let mut hits = 0;
    for _ in 0..n {
        let d = sample_draws(&probs, &g, [1, 0, 0, 0], &mut rng);
        hits += usize::from(d[0] == vec![0]);
    }
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.8).abs() < 0.015, "{freq}");
    let lp = logprob_values(&probs, &g, &[vec![0], vec![], vec![], vec![]]);
    assert_abs_diff_eq!(lp[0], 0.8f64.ln(), epsilon = 1e-15);
}

#[test]
fn plackett_luce_probabilities_sum_to_one() {
    let g = random_graph(5, 4, 3);
    let probs = [vec![0.9, 0.3, 0.6, 0.05], vec![0.5; 4], vec![0.5; g.om_edges.len()], vec![0.5; g.om_edges.len()]];
    let mut g = g;
    g.masks.uptime = vec![true; 4];
    for sigma in 1..=4 {
        let mut total = 0.0;
        let mut seqs = vec![vec![]];
        for _ in 0..sigma {
            let mut next = Vec::new();
            for s in &seqs {
                for i in (0..4).filter(|i| !s.contains(i)) {
                    next.push([s.clone(), vec![i]].concat());
                }
            }
            seqs = next;
        }
        for s in &seqs {
            total += logprob_values(&probs, &g, &[s.clone(), vec![], vec![], vec![]])[0].exp();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
    // Both entries forced: the second draw has probability one.
    let two = [vec![0.7, 0.2], vec![0.5, 0.5], vec![], vec![]];
    let g2 = tiny_graph(vec![true, true]);
    let g2 = HeteroGraph { om_edges: vec![], om_dedicated: vec![], masks: ActionMasks { add: vec![], remove: vec![], ..g2.masks.clone() }, ..g2 };
    let a = logprob_values(&two, &g2, &[vec![0, 1], vec![], vec![], vec![]])[0];
    let b = logprob_values(&two, &g2, &[vec![1, 0], vec![], vec![], vec![]])[0];
    assert_abs_diff_eq!(a, (0.7f64 / 0.9).ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(a.exp() + b.exp(), 1.0, epsilon = 1e-15);
}

#[test]
fn removals_never_empty_an_operation() {
    for seed in 0..30 {
        let g = random_graph(seed, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = [vec![1.0; 6], vec![1.0; 6], vec![1.0; g.om_edges.len()], vec![1.0; g.om_edges.len()]];
        let d = sample_draws(&w, &g, [0, 0, 0, 50], &mut rng);
        let mut left = vec![0; 8];
        for (e, &(o, _)) in g.om_edges.iter().enumerate() {
            left[o] += usize::from(g.om_dedicated[e]);
        }
        for &e in &d[3] {
            assert!(g.masks.remove[e]);
            left[g.om_edges[e].0] -= 1;
        }
        assert!(left.iter().all(|&c| c >= 1));
        // Every removable surplus was used up.
        assert_eq!(head_support(Head::Remove, &g, &d[3]), Vec::<usize>::new());
    }
}

#[test]
fn greedy_breaks_ties_low() {
    let g = tiny_graph(vec![true, true]);
    let w = [vec![0.4, 0.4], vec![0.1, 0.9], vec![], vec![]];
    let g = HeteroGraph { om_edges: vec![], om_dedicated: vec![], masks: ActionMasks { add: vec![], remove: vec![], ..g.masks.clone() }, ..g };
    let d = greedy_draws(&w, &g, [1, 1, 0, 0]);
    assert_eq!(d[0], vec![0]);
    assert_eq!(d[1], vec![1]);
}

#[test]
fn fully_masked_head_is_skipped() {
    let net = small(1);
    let mut g = random_graph(2, 4, 5);
    g.masks.uptime = vec![false; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dec = net.act(&g, [2, 1, 1, 1], &mut rng, false);
    assert!(dec.actions.u_targets.is_empty());
    assert_eq!(dec.actions.head_logprobs[0], 0.0);
    assert_eq!(dec.actions.r_targets.len(), 1);
}

#[test]
fn masked_entries_get_no_gradient() {
    let mut g = random_graph(4, 4, 6);
    g.masks.uptime = vec![true, false, true, false];
    let probs = [
        Tensor::column(vec![0.3, 0.9, 0.6, 0.2]),
        Tensor::column(vec![0.5; 4]),
        Tensor::column(vec![0.5; g.om_edges.len()]),
        Tensor::column(vec![0.5; g.om_edges.len()]),
    ];
    let mut tape = Tape::new();
    let vars = probs.map(|p| tape.constant(p));
    let lp = tape_logprob(&mut tape, &vars, &g, &[vec![2, 0], vec![], vec![], vec![]]);
    let grads = tape.backward(lp);
    let gu = grads.get(vars[0]).unwrap();
    assert_eq!(gu.data[1], 0.0);
    assert_eq!(gu.data[3], 0.0);
    assert!(gu.data[0] != 0.0 && gu.data[2] != 0.0);
    assert_abs_diff_eq!(tape.value(lp).item(), (0.6f64 / 0.9).ln() + (0.3f64 / 0.3).ln(), epsilon = 1e-15);
}

#[test]
fn tape_and_plain_logprobs_agree() {
    let net = small(1);
    let g = random_graph(6, 5, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dec = net.act(&g, [2, 2, 2, 2], &mut rng, false);
    let mut tape = Tape::new();
    let f = net.forward(&mut tape, &g);
    let lp = net.logprob(&mut tape, &f, &g, &dec.actions.draws);
    assert_abs_diff_eq!(tape.value(lp).item(), dec.actions.joint_logprob, epsilon = 1e-12);
    assert!(dec.actions.joint_logprob <= 0.0);
    assert_abs_diff_eq!(tape.value(f.value).item(), dec.value, epsilon = 0.0);
}

#[test]
fn sampled_actions_are_feasible_on_the_fab() {
    let s = Arc::new(toy::three_by_six());
    let net = small(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut norm = FeatureNormalizer::default();
    let mut f = FabState::new(s.clone(), 1);
    for day in 1..=6 {
        f.advance(day as f64 * 1440.0);
        let g = extract_graph(&f, &mut norm);
        let dec = net.act(&g, [1, 1, 2, 2], &mut rng, false);
        f.apply_action_set(&dec.actions).unwrap();
        f.check_invariants().unwrap();
    }
}

#[test]
fn finite_difference_gradients() {
    let net = small(2);
    let g = random_graph(8, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dec = net.act(&g, [1, 1, 1, 1], &mut rng, false);
    let loss = |n: &PolicyNet| {
        let mut tape = Tape::new();
        let f = n.forward(&mut tape, &g);
        let lp = n.logprob(&mut tape, &f, &g, &dec.actions.draws);
        let sq = tape.square(f.value);
        let l = tape.add(lp, sq);
        (tape, l)
    };
    let (tape, l) = loss(&net);
    let grads = tape.param_grads(&tape.backward(l));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (id, gt) in grads {
        for k in 0..gt.len() {
            let mut p = net.clone();
            p.params.get_mut(id).data[k] += h;
            let (t1, l1) = loss(&p);
            let mut m = net.clone();
            m.params.get_mut(id).data[k] -= h;
            let (t2, l2) = loss(&m);
            let fd = (t1.value(l1).item() - t2.value(l2).item()) / (2.0 * h);
            let a = gt.data[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn checkpoint_round_trip() {
    let net = small(2);
    let mut norm = FeatureNormalizer::default();
    let s = Arc::new(toy::three_by_six());
    let mut f = FabState::new(s.clone(), 0);
    f.advance(1440.0);
    extract_graph(&f, &mut norm);
    let ck = Checkpoint::new(&net, &norm, &s.content_hash());
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.policy().unwrap(), net);
    back.check_scenario(&s.content_hash()).unwrap();
    assert!(matches!(back.check_scenario("deadbeef"), Err(CheckpointError::Mismatch { .. })));

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Mismatch { .. })));
    let mut wrong = ck.clone();
    wrong.header.hidden = 16;
    assert!(wrong.policy().is_err());
}
