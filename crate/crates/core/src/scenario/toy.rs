//! Small hand-built scenarios with known behaviour, used by tests and the
//! learnability check.

use super::{
    ArrivalSpec, FamilySpec, Interarrival, MachineSpec, OperationSpec, Product, Scenario,
    SigmaBudget,
};

fn family(id: usize, name: &str) -> FamilySpec {
    FamilySpec { id, name: name.into(), layer: false }
}

fn machine(id: usize, family: usize) -> MachineSpec {
    MachineSpec {
        id,
        name: format!("M{id}"),
        family,
        min_batch: 1,
        max_batch: 1,
        base_uptime: 1.0,
        mean_repair_min: 0.0,
    }
}

fn op(id: usize, family: usize, processing_min: f64) -> OperationSpec {
    OperationSpec {
        id,
        name: format!("O{id}"),
        family,
        processing_min,
        setup_min: 0.0,
        optional: false,
        dedicated: None,
    }
}

/// One always-up machine running a one-step product. Lots are released
/// every `interval_min` starting at `first_min`.
pub fn single_machine(processing_min: f64, first_min: f64, interval_min: f64) -> Scenario {
    Scenario::new(
        "single-machine",
        1440.0,
        5,
        SigmaBudget { uptime: 1, efficiency: 1, add: 0, remove: 0 },
        vec![family(0, "tool")],
        vec![machine(0, 0)],
        vec![op(0, 0, processing_min)],
        vec![Product { id: 0, name: "P".into(), route: vec![0], due_offset_min: 1440.0 }],
        vec![ArrivalSpec {
            product: 0,
            interarrival: Interarrival::Constant { interval_min },
            wafers_per_lot: 25,
            first_arrival_min: Some(first_min),
        }],
    )
    .expect("valid toy scenario")
}

/// Same layout as [`single_machine`] but with no arrivals at all.
pub fn idle_machine(base_uptime: f64, mean_repair_min: f64) -> Scenario {
    let mut m = machine(0, 0);
    m.base_uptime = base_uptime;
    m.mean_repair_min = mean_repair_min;
    Scenario::new(
        "idle-machine",
        1440.0,
        5,
        SigmaBudget { uptime: 1, efficiency: 1, add: 0, remove: 0 },
        vec![family(0, "tool")],
        vec![m],
        vec![op(0, 0, 60.0)],
        vec![Product { id: 0, name: "P".into(), route: vec![0], due_offset_min: 1440.0 }],
        vec![],
    )
    .expect("valid toy scenario")
}

/// Two machines in separate families. Machine 0 serves an overloaded
/// product (60 min per lot, one lot every 40 min) and machine 1 an almost
/// idle one (10 min per lot, one lot every 240 min). Arrivals are
/// deterministic and nothing fails, so speeding up machine 0 raises the
/// going rate while speeding up machine 1 changes nothing.
pub fn bottleneck_pair() -> Scenario {
    Scenario::new(
        "bottleneck-pair",
        1440.0,
        5,
        SigmaBudget { uptime: 0, efficiency: 1, add: 0, remove: 0 },
        vec![family(0, "slow"), family(1, "fast")],
        vec![machine(0, 0), machine(1, 1)],
        vec![op(0, 0, 60.0), op(1, 1, 10.0)],
        vec![
            Product { id: 0, name: "Busy".into(), route: vec![0], due_offset_min: 1440.0 },
            Product { id: 1, name: "Light".into(), route: vec![1], due_offset_min: 1440.0 },
        ],
        vec![
            ArrivalSpec {
                product: 0,
                interarrival: Interarrival::Constant { interval_min: 40.0 },
                wafers_per_lot: 25,
                first_arrival_min: Some(0.0),
            },
            ArrivalSpec {
                product: 1,
                interarrival: Interarrival::Constant { interval_min: 240.0 },
                wafers_per_lot: 25,
                first_arrival_min: Some(0.0),
            },
        ],
    )
    .expect("valid toy scenario")
}

/// Three machines in one family sharing a two-product, three-operation
/// layout with partial dedications, so every action head has candidates.
/// Used for gradient checks on a 3-machine / 6-operation graph.
pub fn three_by_six() -> Scenario {
    let mut ops: Vec<OperationSpec> = (0..6).map(|i| op(i, i % 2, 30.0 + 5.0 * i as f64)).collect();
    ops[0].dedicated = Some(vec![0]);
    ops[2].dedicated = Some(vec![0, 2]);
    ops[3].dedicated = Some(vec![1]);
    let mut machines = vec![machine(0, 0), machine(1, 1), machine(2, 0)];
    for m in &mut machines {
        m.base_uptime = 0.9;
        m.mean_repair_min = 60.0;
    }
    Scenario::new(
        "three-by-six",
        1440.0,
        5,
        SigmaBudget { uptime: 1, efficiency: 1, add: 1, remove: 1 },
        vec![family(0, "even"), family(1, "odd")],
        machines,
        ops,
        vec![
            Product { id: 0, name: "A".into(), route: vec![0, 1, 2], due_offset_min: 600.0 },
            Product { id: 1, name: "B".into(), route: vec![3, 4, 5], due_offset_min: 600.0 },
        ],
        vec![
            ArrivalSpec {
                product: 0,
                interarrival: Interarrival::Exponential { mean_min: 50.0 },
                wafers_per_lot: 25,
                first_arrival_min: None,
            },
            ArrivalSpec {
                product: 1,
                interarrival: Interarrival::Exponential { mean_min: 70.0 },
                wafers_per_lot: 20,
                first_arrival_min: None,
            },
        ],
    )
    .expect("valid toy scenario")
}
