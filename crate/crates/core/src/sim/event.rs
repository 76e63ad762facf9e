use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    LotArrival { product: usize },
    ProcessEnd { machine: usize, epoch: u64 },
    SetupEnd { machine: usize, epoch: u64 },
    MachineDown { machine: usize, epoch: u64 },
    MachineUp { machine: usize },
    PeriodBoundary,
    /// Re-examines a batch operation whose head lot may have timed out.
    BatchTimeout { op: usize },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::LotArrival { .. } => "lot_arrival",
            EventKind::ProcessEnd { .. } => "process_end",
            EventKind::SetupEnd { .. } => "setup_end",
            EventKind::MachineDown { .. } => "machine_down",
            EventKind::MachineUp { .. } => "machine_up",
            EventKind::PeriodBoundary => "period_boundary",
            EventKind::BatchTimeout { .. } => "batch_timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future-event list ordered by `(time, seq)`; `seq` increases on every
/// push, so equal-time events pop in scheduling order.
#[derive(Clone, Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time, seq, kind });
        seq
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }
}
