//! Random graphs and structural transforms for property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionMasks, HeteroGraph, FEATURE_DIMS};
use crate::autodiff::Tensor;

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn recompute_masks(g: &mut HeteroGraph) {
    let mut count = vec![0usize; g.num_ops()];
    for (e, &(o, _)) in g.om_edges.iter().enumerate() {
        if g.om_dedicated[e] {
            count[o] += 1;
        }
    }
    g.masks.add = g.om_dedicated.iter().map(|&d| !d).collect();
    g.masks.remove = g.om_edges.iter().zip(&g.om_dedicated).map(|(&(o, _), &d)| d && count[o] > 1).collect();
}

/// A random graph with `machines` machines split into two families,
/// `ops` operations on routes of up to four steps, random dedications
/// (at least one per operation) and features in `[-2, 2)`.
pub fn random_graph(seed: u64, machines: usize, ops: usize) -> HeteroGraph {
    assert!(machines >= 2 && ops >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_family: Vec<usize> = (0..machines).map(|m| m % 2).collect();
    let o_family: Vec<usize> = (0..ops).map(|_| rng.random_range(0..2)).collect();

    let mut om_edges = Vec::new();
    let mut om_dedicated = Vec::new();
    for (o, &f) in o_family.iter().enumerate() {
        let fam: Vec<usize> = (0..machines).filter(|&m| m_family[m] == f).collect();
        let must = fam[rng.random_range(0..fam.len())];
        for &m in &fam {
            om_edges.push((o, m));
            om_dedicated.push(m == must || rng.random_bool(0.4));
        }
    }

    let mut pred = vec![None; ops];
    let mut succ = vec![None; ops];
    let mut oo_edges = Vec::new();
    let mut start = 0;
    while start < ops {
        let len = rng.random_range(1..=4).min(ops - start);
        for j in start..start + len - 1 {
            oo_edges.push((j, j + 1));
            succ[j] = Some(j + 1);
            pred[j + 1] = Some(j);
        }
        start += len;
    }

    let [d1, d2, d3, d4] = FEATURE_DIMS;
    let mut g = HeteroGraph {
        machine_feats: random_tensor(&mut rng, machines, d1),
        op_feats: random_tensor(&mut rng, ops, d2),
        om_feats: random_tensor(&mut rng, om_edges.len(), d3),
        oo_feats: random_tensor(&mut rng, oo_edges.len(), d4),
        om_edges,
        om_dedicated,
        oo_edges,
        pred,
        succ,
        masks: ActionMasks {
            uptime: (0..machines).map(|_| rng.random_bool(0.8)).collect(),
            efficiency: vec![true; machines],
            add: Vec::new(),
            remove: Vec::new(),
        },
    };
    recompute_masks(&mut g);
    g
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows, t.cols);
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(t.row(i));
    }
    out
}

impl HeteroGraph {
    /// Relabels machine `i` as `mperm[i]` and operation `j` as `operm[j]`.
    /// Candidate edges are re-sorted so the result is a canonical graph.
    pub fn permuted(&self, mperm: &[usize], operm: &[usize]) -> HeteroGraph {
        let mut order: Vec<usize> = (0..self.om_edges.len()).collect();
        let relabel = |e: usize| (operm[self.om_edges[e].0], mperm[self.om_edges[e].1]);
        order.sort_by_key(|&e| relabel(e));
        let mut om_feats = Tensor::zeros(order.len(), self.om_feats.cols);
        for (new, &old) in order.iter().enumerate() {
            om_feats.row_mut(new).copy_from_slice(self.om_feats.row(old));
        }
        let minv = inverse(mperm);
        let oinv = inverse(operm);
        HeteroGraph {
            machine_feats: permute_rows(&self.machine_feats, mperm),
            op_feats: permute_rows(&self.op_feats, operm),
            om_edges: order.iter().map(|&e| relabel(e)).collect(),
            om_feats,
            om_dedicated: order.iter().map(|&e| self.om_dedicated[e]).collect(),
            oo_edges: self.oo_edges.iter().map(|&(a, b)| (operm[a], operm[b])).collect(),
            oo_feats: self.oo_feats.clone(),
            pred: oinv.iter().map(|&o| self.pred[o].map(|p| operm[p])).collect(),
            succ: oinv.iter().map(|&o| self.succ[o].map(|s| operm[s])).collect(),
            masks: ActionMasks {
                uptime: minv.iter().map(|&m| self.masks.uptime[m]).collect(),
                efficiency: minv.iter().map(|&m| self.masks.efficiency[m]).collect(),
                add: order.iter().map(|&e| self.masks.add[e]).collect(),
                remove: order.iter().map(|&e| self.masks.remove[e]).collect(),
            },
        }
    }

    /// Two unconnected copies side by side; the second copy's nodes follow the first's.
    pub fn disjoint_union(&self, other: &HeteroGraph) -> HeteroGraph {
        let (nm, no) = (self.num_machines(), self.num_ops());
        let stack = |a: &Tensor, b: &Tensor| {
            let mut data = a.data.clone();
            data.extend_from_slice(&b.data);
            Tensor::from_vec(a.rows + b.rows, a.cols, data)
        };
        let cat = |a: &[bool], b: &[bool]| [a, b].concat();
        let shift = |v: &Option<usize>| v.map(|x| x + no);
        HeteroGraph {
            machine_feats: stack(&self.machine_feats, &other.machine_feats),
            op_feats: stack(&self.op_feats, &other.op_feats),
            om_edges: self
                .om_edges
                .iter()
                .copied()
                .chain(other.om_edges.iter().map(|&(o, m)| (o + no, m + nm)))
                .collect(),
            om_feats: stack(&self.om_feats, &other.om_feats),
            om_dedicated: cat(&self.om_dedicated, &other.om_dedicated),
            oo_edges: self
                .oo_edges
                .iter()
                .copied()
                .chain(other.oo_edges.iter().map(|&(a, b)| (a + no, b + no)))
                .collect(),
            oo_feats: stack(&self.oo_feats, &other.oo_feats),
            pred: self.pred.iter().copied().chain(other.pred.iter().map(shift)).collect(),
            succ: self.succ.iter().copied().chain(other.succ.iter().map(shift)).collect(),
            masks: ActionMasks {
                uptime: cat(&self.masks.uptime, &other.masks.uptime),
                efficiency: cat(&self.masks.efficiency, &other.masks.efficiency),
                add: cat(&self.masks.add, &other.masks.add),
                remove: cat(&self.masks.remove, &other.masks.remove),
            },
        }
    }
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
