//! Edge-aware heterogeneous graph encoder with action and value heads.
//!
//! Each layer first updates machines by additive attention over the
//! operations they are dedicated to (edge features enter the key), then
//! updates operations with an MLP over their route neighbours, themselves
//! and the mean of their dedicated machines. Final embeddings average the
//! layer outputs. The uptime and efficiency heads are per-machine MLPs;
//! dedication scores compare projected machine and operation embeddings.

mod checkpoint;
mod sample;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::features::{HeteroGraph, FEATURE_DIMS};

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, CHECKPOINT_VERSION};
pub use sample::{actions_from_draws, greedy_draws, head_support, logprob_values, sample_draws, tape_logprob, Decision};

/// Saturation constant of the dedication score.
pub const DEDICATION_C: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub layers: usize,
    pub feature_dims: [usize; 4],
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { hidden: 64, layers: 1, feature_dims: FEATURE_DIMS }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    wq: usize,
    wk: usize,
    att: usize,
    wv: usize,
    wself: usize,
    mbias: usize,
    op: Mlp,
}

/// Two tanh hidden layers and a linear output.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Mlp {
    w: [usize; 3],
    b: [usize; 3],
}

impl Mlp {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = [(input, hidden), (hidden, hidden), (hidden, out)];
        let mut w = [0; 3];
        let mut b = [0; 3];
        for (k, &(i, o)) in dims.iter().enumerate() {
            w[k] = store.add_uniform(&format!("{name}.w{k}"), i, o, rng);
            b[k] = store.add_zeros(&format!("{name}.b{k}"), 1, o);
        }
        Self { w, b }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for k in 0..3 {
            let w = tape.param(self.w[k], store.get(self.w[k]));
            let b = tape.param(self.b[k], store.get(self.b[k]));
            let z = tape.matmul(h, w);
            h = tape.add_row(z, b);
            if k < 2 {
                h = tape.tanh(h);
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamIds {
    layers: Vec<LayerIds>,
    uptime: Mlp,
    efficiency: Mlp,
    ded_q: usize,
    ded_k: usize,
    critic_w: usize,
    critic_b: usize,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub machine_emb: Var,
    pub op_emb: Var,
    /// Per-layer outputs before averaging.
    pub layer_machine: Vec<Var>,
    pub layer_op: Vec<Var>,
    /// Head probabilities as columns: machines for uptime/efficiency,
    /// candidate edges for add/remove.
    pub probs: [Var; 4],
    pub value: Var,
}

/// Plain values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub machine_emb: Tensor,
    pub op_emb: Tensor,
    pub probs: [Vec<f64>; 4],
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub params: ParamStore,
    ids: ParamIds,
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        assert!(config.hidden > 0 && config.layers > 0, "hidden size and layer count must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let [d1, d2, d3, d4] = config.feature_dims;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (m_in, o_in) = if l == 0 { (d1, d2) } else { (d, d) };
            let p = format!("layer{l}");
            let wq = store.add_uniform(&format!("{p}.att.wq"), m_in, d, &mut rng);
            let wk = store.add_uniform(&format!("{p}.att.wk"), o_in + d3, d, &mut rng);
            let att = store.add_uniform(&format!("{p}.att.a"), d, 1, &mut rng);
            let wv = store.add_uniform(&format!("{p}.att.wv"), o_in, d, &mut rng);
            let wself = store.add_uniform(&format!("{p}.machine.wself"), m_in, d, &mut rng);
            let mbias = store.add_zeros(&format!("{p}.machine.b"), 1, d);
            let op = Mlp::new(&mut store, &format!("{p}.op"), 3 * o_in + 2 * d4 + d, d, d, &mut rng);
            layers.push(LayerIds { wq, wk, att, wv, wself, mbias, op });
        }
        let uptime = Mlp::new(&mut store, "head.uptime", d, d, 1, &mut rng);
        let efficiency = Mlp::new(&mut store, "head.efficiency", d, d, 1, &mut rng);
        let ded_q = store.add_uniform("head.dedication.wq", d, d, &mut rng);
        let ded_k = store.add_uniform("head.dedication.wk", d, d, &mut rng);
        let critic_w = store.add_uniform("critic.w", 2 * d, 1, &mut rng);
        let critic_b = store.add_zeros("critic.b", 1, 1);
        let ids = ParamIds { layers, uptime, efficiency, ded_q, ded_k, critic_w, critic_b };
        Self { config, params: store, ids }
    }

    /// Same architecture with parameters taken from `params`.
    pub fn with_params(config: PolicyConfig, params: ParamStore) -> Result<Self, CheckpointError> {
        let shell = Self::new(config, 0);
        if shell.params.len() != params.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} parameter tensors, found {}",
                shell.params.len(),
                params.len()
            )));
        }
        for id in 0..params.len() {
            let (a, b) = (shell.params.get(id), params.get(id));
            if a.shape() != b.shape() || shell.params.name(id) != params.name(id) {
                return Err(CheckpointError::Format(format!(
                    "parameter {id} is {} {:?}, expected {} {:?}",
                    params.name(id),
                    b.shape(),
                    shell.params.name(id),
                    a.shape()
                )));
            }
        }
        Ok(Self { config, params, ids: shell.ids })
    }

    /// Ids of the value-head parameters; everything else belongs to the actor.
    pub fn is_critic_param(&self, id: usize) -> bool {
        id == self.ids.critic_w || id == self.ids.critic_b
    }

    fn param(&self, tape: &mut Tape, id: usize) -> Var {
        tape.param(id, self.params.get(id))
    }

    /// Machine and operation embeddings plus per-layer outputs.
    pub fn encode(&self, tape: &mut Tape, g: &HeteroGraph) -> (Var, Var, Vec<Var>, Vec<Var>) {
        let n_m = g.num_machines();
        let n_o = g.num_ops();
        let d = self.config.hidden;

        let ded: Vec<usize> = (0..g.om_edges.len()).filter(|&e| g.om_dedicated[e]).collect();
        let edge_op: Vec<usize> = ded.iter().map(|&e| g.om_edges[e].0).collect();
        let edge_m: Vec<usize> = ded.iter().map(|&e| g.om_edges[e].1).collect();
        let mut ef = Tensor::zeros(ded.len(), g.om_feats.cols);
        for (i, &e) in ded.iter().enumerate() {
            ef.row_mut(i).copy_from_slice(g.om_feats.row(e));
        }
        let ef = tape.constant(ef);
        let ones = tape.constant(Tensor::from_vec(1, d, vec![1.0; d]));

        let src: Vec<usize> = g.oo_edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = g.oo_edges.iter().map(|e| e.1).collect();
        let d4 = g.oo_feats.cols;
        let mut in_flow = Tensor::zeros(n_o, d4);
        let mut out_flow = Tensor::zeros(n_o, d4);
        for (e, &(a, b)) in g.oo_edges.iter().enumerate() {
            for c in 0..d4 {
                in_flow.set(b, c, g.oo_feats.get(e, c));
                out_flow.set(a, c, g.oo_feats.get(e, c));
            }
        }
        let in_flow = tape.constant(in_flow);
        let out_flow = tape.constant(out_flow);

        let mut hm = tape.constant(g.machine_feats.clone());
        let mut ho = tape.constant(g.op_feats.clone());
        let mut layer_m = Vec::with_capacity(self.ids.layers.len());
        let mut layer_o = Vec::with_capacity(self.ids.layers.len());
        for ids in &self.ids.layers {
            // Machines attend over their dedicated operations.
            let wq = self.param(tape, ids.wq);
            let q = tape.matmul(hm, wq);
            let q_e = tape.gather_rows(q, edge_m.clone());
            let o_e = tape.gather_rows(ho, edge_op.clone());
            let kin = tape.concat_cols(&[o_e, ef]);
            let wk = self.param(tape, ids.wk);
            let k_e = tape.matmul(kin, wk);
            let qk = tape.add(q_e, k_e);
            let act = tape.tanh(qk);
            let a = self.param(tape, ids.att);
            let score = tape.matmul(act, a);
            let alpha = tape.segment_softmax(score, edge_m.clone(), n_m);
            let wv = self.param(tape, ids.wv);
            let v = tape.matmul(o_e, wv);
            let alpha_wide = tape.matmul(alpha, ones);
            let weighted = tape.mul(v, alpha_wide);
            let agg = tape.segment_sum(weighted, edge_m.clone(), n_m);
            let wself = self.param(tape, ids.wself);
            let own = tape.matmul(hm, wself);
            let pre = tape.add(own, agg);
            let b = self.param(tape, ids.mbias);
            let pre = tape.add_row(pre, b);
            let new_m = tape.tanh(pre);

            // Operations aggregate route neighbours, themselves and machines.
            let pred_rows = tape.gather_rows(ho, src.clone());
            let pred = tape.segment_sum(pred_rows, dst.clone(), n_o);
            let succ_rows = tape.gather_rows(ho, dst.clone());
            let succ = tape.segment_sum(succ_rows, src.clone(), n_o);
            let m_e = tape.gather_rows(new_m, edge_m.clone());
            let m_mean = tape.segment_mean(m_e, edge_op.clone(), n_o);
            let x = tape.concat_cols(&[pred, in_flow, succ, out_flow, ho, m_mean]);
            let new_o = ids.op.apply(tape, &self.params, x);

            layer_m.push(new_m);
            layer_o.push(new_o);
            hm = new_m;
            ho = new_o;
        }
        let (m, o) = if layer_m.len() == 1 {
            (layer_m[0], layer_o[0])
        } else {
            let w = 1.0 / layer_m.len() as f64;
            let mut sm = layer_m[0];
            let mut so = layer_o[0];
            for l in 1..layer_m.len() {
                sm = tape.add(sm, layer_m[l]);
                so = tape.add(so, layer_o[l]);
            }
            (tape.scale(sm, w), tape.scale(so, w))
        };
        (m, o, layer_m, layer_o)
    }

    /// Uptime and efficiency probabilities per machine.
    pub fn machine_heads(&self, tape: &mut Tape, machine_emb: Var) -> (Var, Var) {
        let u = self.ids.uptime.apply(tape, &self.params, machine_emb);
        let r = self.ids.efficiency.apply(tape, &self.params, machine_emb);
        (tape.sigmoid(u), tape.sigmoid(r))
    }

    /// Add and remove probabilities for every candidate `(op, machine)` edge.
    pub fn dedication_heads(&self, tape: &mut Tape, g: &HeteroGraph, machine_emb: Var, op_emb: Var) -> (Var, Var) {
        let wq = self.param(tape, self.ids.ded_q);
        let wk = self.param(tape, self.ids.ded_k);
        let q = tape.matmul(machine_emb, wq);
        let k = tape.matmul(op_emb, wk);
        let q_e = tape.gather_rows(q, g.om_edges.iter().map(|e| e.1).collect());
        let k_e = tape.gather_rows(k, g.om_edges.iter().map(|e| e.0).collect());
        let dot = tape.row_dot(q_e, k_e);
        let s = tape.scale(dot, 1.0 / (self.config.hidden as f64).sqrt());
        let t = tape.tanh(s);
        let z = tape.scale(t, -DEDICATION_C);
        let add = tape.sigmoid(z);
        let remove = tape.one_minus(add);
        (add, remove)
    }

    /// Critic over the mean-pooled machine and operation embeddings.
    pub fn value(&self, tape: &mut Tape, machine_emb: Var, op_emb: Var) -> Var {
        let pm = tape.mean_rows(machine_emb);
        let po = tape.mean_rows(op_emb);
        let h = tape.concat_cols(&[pm, po]);
        let w = self.param(tape, self.ids.critic_w);
        let b = self.param(tape, self.ids.critic_b);
        let v = tape.matmul(h, w);
        tape.add(v, b)
    }

    pub fn forward(&self, tape: &mut Tape, g: &HeteroGraph) -> Forward {
        let (m, o, layer_machine, layer_op) = self.encode(tape, g);
        let (u, r) = self.machine_heads(tape, m);
        let (add, remove) = self.dedication_heads(tape, g, m, o);
        let value = self.value(tape, m, o);
        Forward { machine_emb: m, op_emb: o, layer_machine, layer_op, probs: [u, r, add, remove], value }
    }

    pub fn evaluate(&self, g: &HeteroGraph) -> Evaluation {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, g);
        Evaluation {
            machine_emb: tape.value(f.machine_emb).clone(),
            op_emb: tape.value(f.op_emb).clone(),
            probs: f.probs.map(|p| tape.value(p).data.clone()),
            value: tape.value(f.value).item(),
        }
    }
}

#[cfg(test)]
mod tests;
