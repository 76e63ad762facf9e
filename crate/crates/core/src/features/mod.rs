//! Heterogeneous graph snapshot of the fab.
//!
//! Machine and operation nodes carry per-period statistics. Operation to
//! machine edges connect every compatible pair (same family); the ones
//! that form the current dedication are marked `dedicated`. Operation to
//! operation edges follow each product route.

mod normalizer;
mod synthetic;

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::sim::{FabState, MIN_PER_DAY};

pub use normalizer::{FeatureNormalizer, Group, RunningStats, VARIANCE_FLOOR};
pub use synthetic::{random_graph, random_permutation};

pub const MACHINE_DIM: usize = 16;
pub const OP_DIM: usize = 15;
pub const OM_EDGE_DIM: usize = 2;
pub const OO_EDGE_DIM: usize = 1;
pub const FEATURE_DIMS: [usize; 4] = [MACHINE_DIM, OP_DIM, OM_EDGE_DIM, OO_EDGE_DIM];

pub const MACHINE_FEATURES: [&str; MACHINE_DIM] = [
    "min_batch",
    "max_batch",
    "waiting_lots",
    "completed_lots",
    "completed_wafers",
    "avg_cycle_time",
    "avg_queue_time",
    "avg_processing_time",
    "productive_frac",
    "down_frac",
    "idle_frac",
    "setup_frac",
    "avg_interval_time",
    "avg_dispatch_queue",
    "wip_lots",
    "wip_wafers",
];

pub const OP_FEATURES: [&str; OP_DIM] = [
    "completed_wafers",
    "completed_lots",
    "completed_layer_wafers",
    "completed_main_wafers",
    "avg_wip_lots",
    "avg_waiting_wafers",
    "avg_cycle_time",
    "avg_remaining_due",
    "avg_queue_time",
    "avg_processing_time",
    "remaining_processing_time",
    "op_remaining_due",
    "fab_cycle_time",
    "daily_going_rate",
    "dynamic_cycle_time",
];

impl Default for FeatureNormalizer {
    fn default() -> Self {
        FeatureNormalizer::new(FEATURE_DIMS)
    }
}

/// Feasibility of each candidate target, aligned with the head's index space:
/// machines for `uptime`/`efficiency`, `om_edges` for `add`/`remove`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionMasks {
    pub uptime: Vec<bool>,
    pub efficiency: Vec<bool>,
    pub add: Vec<bool>,
    pub remove: Vec<bool>,
}

impl ActionMasks {
    pub fn head(&self, k: usize) -> &[bool] {
        match k {
            0 => &self.uptime,
            1 => &self.efficiency,
            2 => &self.add,
            _ => &self.remove,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub machine_feats: Tensor,
    pub op_feats: Tensor,
    /// `(op, machine)` for every compatible pair, sorted by op then machine.
    pub om_edges: Vec<(usize, usize)>,
    pub om_feats: Tensor,
    pub om_dedicated: Vec<bool>,
    /// `(op_j, op_j+1)` along each route.
    pub oo_edges: Vec<(usize, usize)>,
    pub oo_feats: Tensor,
    pub pred: Vec<Option<usize>>,
    pub succ: Vec<Option<usize>>,
    pub masks: ActionMasks,
}

impl HeteroGraph {
    pub fn num_machines(&self) -> usize {
        self.machine_feats.rows
    }

    pub fn num_ops(&self) -> usize {
        self.op_feats.rows
    }

    pub fn is_finite(&self) -> bool {
        self.machine_feats.is_finite()
            && self.op_feats.is_finite()
            && self.om_feats.is_finite()
            && self.oo_feats.is_finite()
    }

    /// Plain-text node and edge tables.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let row = |t: &Tensor, r: usize| t.row(r).iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join("\t");
        let _ = writeln!(out, "# machines\nid\t{}\tuptime_ok", MACHINE_FEATURES.join("\t"));
        for m in 0..self.num_machines() {
            let _ = writeln!(out, "{m}\t{}\t{}", row(&self.machine_feats, m), u8::from(self.masks.uptime[m]));
        }
        let _ = writeln!(out, "# operations\nid\t{}", OP_FEATURES.join("\t"));
        for o in 0..self.num_ops() {
            let _ = writeln!(out, "{o}\t{}", row(&self.op_feats, o));
        }
        let _ = writeln!(out, "# op_machine_edges\nop\tmachine\tdedicated\tprocessing\tsetup\tcan_add\tcan_remove");
        for (e, &(o, m)) in self.om_edges.iter().enumerate() {
            let _ = writeln!(
                out,
                "{o}\t{m}\t{}\t{}\t{}\t{}",
                u8::from(self.om_dedicated[e]),
                row(&self.om_feats, e),
                u8::from(self.masks.add[e]),
                u8::from(self.masks.remove[e])
            );
        }
        let _ = writeln!(out, "# op_op_edges\nfrom\tto\tflow");
        for (e, &(a, b)) in self.oo_edges.iter().enumerate() {
            let _ = writeln!(out, "{a}\t{b}\t{}", row(&self.oo_feats, e));
        }
        out
    }
}

/// Unnormalized feature tables for a state.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeatures {
    pub machine: Vec<Vec<f64>>,
    pub op: Vec<Vec<f64>>,
    pub om: Vec<Vec<f64>>,
    pub oo: Vec<Vec<f64>>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 { num / den } else { 0.0 }
}

/// Graph structure and raw features; statistics come from the last closed period.
pub fn raw_features(state: &FabState) -> (RawFeatures, HeteroGraph) {
    let s = state.scenario();
    let idx = s.index();
    let now = state.clock();
    let period = state.last_period();
    let len = period.length();
    let n_m = s.num_machines();
    let n_o = s.num_operations();

    // Lots waiting and loaded, per operation.
    let mut queued_lots = vec![0.0; n_o];
    let mut queued_wafers = vec![0.0; n_o];
    for op in 0..n_o {
        for &l in state.op_queue(op) {
            queued_lots[op] += 1.0;
            queued_wafers[op] += state.lots()[l].wafers as f64;
        }
    }
    let mut due_sum = vec![0.0; s.num_products()];
    let mut due_n = vec![0.0; s.num_products()];
    let mut op_due_sum = vec![0.0; n_o];
    let mut op_due_n = vec![0.0; n_o];
    for lot in state.lots().iter().filter(|l| l.completion_time.is_none()) {
        let left = lot.due_time - now;
        due_sum[lot.product] += left;
        due_n[lot.product] += 1.0;
        let op = s.products[lot.product].route[lot.current_step];
        op_due_sum[op] += left;
        op_due_n[op] += 1.0;
    }

    let machine: Vec<Vec<f64>> = (0..n_m)
        .map(|m| {
            let spec = &s.machines[m];
            let ms = &state.machines()[m];
            let st = &period.machines[m];
            let waiting: f64 = ms.dedicated_ops.iter().map(|&o| queued_lots[o]).sum();
            let waiting_wafers: f64 = ms.dedicated_ops.iter().map(|&o| queued_wafers[o]).sum();
            let loaded = ms.loaded_lots();
            let loaded_wafers: f64 = loaded.iter().map(|&l| state.lots()[l].wafers as f64).sum();
            vec![
                spec.min_batch as f64,
                spec.max_batch as f64,
                waiting,
                st.completed_lots as f64,
                st.completed_wafers as f64,
                ratio(st.cycle_time_sum, st.completed_lots as f64),
                ratio(st.queue_time_sum, st.queue_count as f64),
                ratio(st.processing_time_sum, st.batches as f64),
                ratio(st.productive_min, len),
                ratio(st.down_min, len),
                ratio(st.idle_min, len),
                ratio(st.setup_min, len),
                ratio(st.interval_sum, st.interval_count as f64),
                ratio(st.dispatch_queue_sum, st.dispatch_count as f64),
                waiting + loaded.len() as f64,
                waiting_wafers + loaded_wafers,
            ]
        })
        .collect();

    let fab_cycle = state.fab_cycle_mean().unwrap_or(0.0);
    let op: Vec<Vec<f64>> = (0..n_o)
        .map(|o| {
            let st = &period.ops[o];
            let p = idx.op_product[o];
            let lots = st.completed_lots as f64;
            vec![
                st.completed_wafers as f64,
                lots,
                st.layer_wafers as f64,
                st.main_wafers as f64,
                ratio(st.wip_lot_integral, len),
                ratio(st.waiting_wafer_integral, len),
                ratio(st.op_cycle_sum, lots),
                ratio(due_sum[p], due_n[p]),
                ratio(st.queue_time_sum, st.queue_count as f64),
                ratio(st.processing_time_sum, lots),
                idx.remaining_processing_min[o],
                ratio(op_due_sum[o], op_due_n[o]),
                fab_cycle,
                ratio(lots * MIN_PER_DAY, len),
                ratio(st.dynamic_cycle_sum, lots),
            ]
        })
        .collect();

    let mut om_edges = Vec::new();
    let mut om = Vec::new();
    let mut om_dedicated = Vec::new();
    for (o, spec) in s.operations.iter().enumerate() {
        for &m in &idx.family_machines[spec.family] {
            om_edges.push((o, m));
            om.push(vec![spec.processing_min * state.machines()[m].efficiency_factor, spec.setup_min]);
            om_dedicated.push(state.is_dedicated(m, o));
        }
    }

    let mut pred = vec![None; n_o];
    let mut succ = vec![None; n_o];
    let mut oo_edges = Vec::new();
    let mut oo = Vec::new();
    for prod in &s.products {
        let n = prod.route.len() as f64;
        for (j, w) in prod.route.windows(2).enumerate() {
            oo_edges.push((w[0], w[1]));
            oo.push(vec![(j + 1) as f64 / n]);
            succ[w[0]] = Some(w[1]);
            pred[w[1]] = Some(w[0]);
        }
    }

    let uptime = state.machines().iter().map(|m| m.uptime_fraction < 1.0).collect();
    let efficiency = vec![true; n_m];
    let add = om_dedicated.iter().map(|&d| !d).collect();
    let remove = om_edges
        .iter()
        .zip(&om_dedicated)
        .map(|(&(o, _), &d)| d && state.op_machines(o).len() > 1)
        .collect();

    let graph = HeteroGraph {
        machine_feats: Tensor::zeros(n_m, MACHINE_DIM),
        op_feats: Tensor::zeros(n_o, OP_DIM),
        om_feats: Tensor::zeros(om_edges.len(), OM_EDGE_DIM),
        oo_feats: Tensor::zeros(oo_edges.len(), OO_EDGE_DIM),
        om_edges,
        om_dedicated,
        oo_edges,
        pred,
        succ,
        masks: ActionMasks { uptime, efficiency, add, remove },
    };
    (RawFeatures { machine, op, om, oo }, graph)
}

/// Snapshot of `state` as a normalized heterogeneous graph. The normalizer
/// first absorbs the raw rows (unless frozen) and is then applied.
pub fn extract_graph(state: &FabState, normalizer: &mut FeatureNormalizer) -> HeteroGraph {
    let (raw, mut graph) = raw_features(state);
    let tables = [
        (Group::Machine, &raw.machine, &mut graph.machine_feats),
        (Group::Operation, &raw.op, &mut graph.op_feats),
        (Group::OpMachineEdge, &raw.om, &mut graph.om_feats),
        (Group::OpOpEdge, &raw.oo, &mut graph.oo_feats),
    ];
    for (group, rows, _) in &tables {
        for r in rows.iter() {
            normalizer.observe(*group, r);
        }
    }
    for (group, rows, out) in tables {
        for (i, r) in rows.iter().enumerate() {
            let dst = out.row_mut(i);
            dst.copy_from_slice(r);
            normalizer.normalize(group, dst);
        }
    }
    graph
}
