use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use super::event::{EventKind, EventQueue, SimEvent};
use super::stats::{Level, PeriodStats, RunningMean};
use crate::action::ActionSet;
use crate::scenario::{Interarrival, Scenario};

pub const UPTIME_STEP: f64 = 0.03;
pub const EFFICIENCY_FACTOR: f64 = 0.9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
}

pub type LotId = usize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lot {
    pub id: LotId,
    pub product: usize,
    pub wafers: u32,
    pub release_time: f64,
    /// Route index of the next step to finish; equals the route length once done.
    pub current_step: usize,
    pub step_entry_time: f64,
    pub queue_entry_time: f64,
    pub completion_time: Option<f64>,
    pub due_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MachineStatus {
    Idle,
    Setup,
    Processing,
    Down,
}

impl MachineStatus {
    fn bucket(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Setup,
    Processing,
}

#[derive(Clone, Debug, PartialEq)]
struct Job {
    op: usize,
    lots: Vec<LotId>,
    phase: Phase,
    end: f64,
    /// Time left when the machine failed mid-job.
    suspended: Option<f64>,
    started: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MachineState {
    pub id: usize,
    pub family_id: usize,
    pub status: MachineStatus,
    /// Sorted operation ids this machine may run.
    pub dedicated_ops: Vec<usize>,
    pub uptime_fraction: f64,
    pub efficiency_factor: f64,
    pub busy_until: f64,
    pub current_setup_key: Option<usize>,
    job: Option<Job>,
    job_epoch: u64,
    fail_epoch: u64,
    status_since: f64,
}

impl MachineState {
    /// Lots currently loaded on the machine.
    pub fn loaded_lots(&self) -> &[LotId] {
        self.job.as_ref().map_or(&[], |j| &j.lots)
    }

    pub fn current_op(&self) -> Option<usize> {
        self.job.as_ref().map(|j| j.op)
    }
}

/// Record of one lot finishing one operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OpOutput {
    pub time: f64,
    pub op: usize,
    pub product: usize,
    pub lot: LotId,
    pub wafers: u32,
}

/// One independent random stream per product (arrivals) and per machine
/// (failures and repairs), so an action on one machine never shifts the
/// draws seen elsewhere.
#[derive(Clone, Debug)]
struct SimRng {
    streams: Vec<ChaCha8Rng>,
}

impl SimRng {
    fn new(seed: u64, n: usize) -> Self {
        let streams = (0..n)
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(k as u64);
                r
            })
            .collect();
        Self { streams }
    }

    fn exp(&mut self, stream: usize, mean: f64) -> f64 {
        Exp::new(1.0 / mean).expect("positive mean").sample(&mut self.streams[stream])
    }
}

/// Mutable simulator world. Cloning is a full fork: the event queue,
/// sequence counter and every random stream are copied.
#[derive(Clone, Debug)]
pub struct FabState {
    scenario: Arc<Scenario>,
    clock: f64,
    queue: EventQueue,
    lots: Vec<Lot>,
    machines: Vec<MachineState>,
    op_queues: Vec<VecDeque<LotId>>,
    /// Dedicated machines per operation, sorted.
    op_machines: Vec<Vec<usize>>,
    rng: SimRng,
    completed: usize,
    outputs: Vec<OpOutput>,
    period: PeriodStats,
    last_period: PeriodStats,
    period_index: usize,
    op_wip: Vec<Level>,
    op_waiting_wafers: Vec<Level>,
    /// Episode-long mean cycle time of completed lots, per product.
    product_cycle: Vec<RunningMean>,
    batch_log: Vec<BatchStart>,
    log: Option<Vec<String>>,
}

/// Size and start condition of every batch started, kept for batch-rule checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BatchStart {
    pub time: f64,
    pub machine: usize,
    pub op: usize,
    pub size: usize,
    /// Waiting time of the oldest lot when the batch started.
    pub head_wait: f64,
}

impl FabState {
    pub fn new(scenario: Arc<Scenario>, seed: u64) -> Self {
        let n_m = scenario.num_machines();
        let n_o = scenario.num_operations();
        let n_p = scenario.num_products();
        let index = scenario.index();
        let mut machines: Vec<MachineState> = scenario
            .machines
            .iter()
            .map(|m| MachineState {
                id: m.id,
                family_id: m.family,
                status: MachineStatus::Idle,
                dedicated_ops: Vec::new(),
                uptime_fraction: m.base_uptime,
                efficiency_factor: 1.0,
                busy_until: 0.0,
                current_setup_key: None,
                job: None,
                job_epoch: 0,
                fail_epoch: 0,
                status_since: 0.0,
            })
            .collect();
        let op_machines = index.initial_dedication.clone();
        for (op, ms) in op_machines.iter().enumerate() {
            for &m in ms {
                machines[m].dedicated_ops.push(op);
            }
        }

        let mut state = FabState {
            clock: 0.0,
            queue: EventQueue::default(),
            lots: Vec::new(),
            machines,
            op_queues: vec![VecDeque::new(); n_o],
            op_machines,
            rng: SimRng::new(seed, n_p + n_m),
            completed: 0,
            outputs: Vec::new(),
            period: PeriodStats::new(0.0, n_m, n_o),
            last_period: PeriodStats::new(0.0, n_m, n_o),
            period_index: 0,
            op_wip: vec![Level::default(); n_o],
            op_waiting_wafers: vec![Level::default(); n_o],
            product_cycle: vec![RunningMean::default(); n_p],
            batch_log: Vec::new(),
            log: None,
            scenario,
        };

        for p in 0..n_p {
            let k = state.scenario.index().arrivals_by_product[p];
            if k == usize::MAX {
                continue;
            }
            let spec = &state.scenario.arrivals[k];
            let first = match (spec.first_arrival_min, spec.interarrival.clone()) {
                (Some(t), _) => t,
                (None, Interarrival::Constant { interval_min }) => interval_min,
                (None, Interarrival::Exponential { mean_min }) => state.rng.exp(p, mean_min),
            };
            state.queue.push(first, EventKind::LotArrival { product: p });
        }
        for m in 0..n_m {
            state.schedule_failure(m);
        }
        let period = state.scenario.decision_period_min;
        state.queue.push(period, EventKind::PeriodBoundary);
        state
    }

    /// Starts recording every processed event as a text line.
    pub fn enable_event_log(&mut self) {
        if self.log.is_none() {
            self.log = Some(Vec::new());
        }
    }

    pub fn event_log(&self) -> &[String] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_event_log(&mut self) -> Vec<String> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Deep, independent copy.
    pub fn fork(&self) -> FabState {
        self.clone()
    }

    /// Replaces every random stream; pending events keep their times.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = SimRng::new(seed, self.rng.streams.len());
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn lots(&self) -> &[Lot] {
        &self.lots
    }

    pub fn machines(&self) -> &[MachineState] {
        &self.machines
    }

    pub fn op_queue(&self, op: usize) -> &VecDeque<LotId> {
        &self.op_queues[op]
    }

    pub fn op_machines(&self, op: usize) -> &[usize] {
        &self.op_machines[op]
    }

    pub fn outputs(&self) -> &[OpOutput] {
        &self.outputs
    }

    pub fn last_period(&self) -> &PeriodStats {
        &self.last_period
    }

    pub fn period_index(&self) -> usize {
        self.period_index
    }

    pub fn product_cycle_mean(&self, product: usize) -> Option<f64> {
        self.product_cycle[product].mean()
    }

    /// Episode-long mean cycle time over all completed lots.
    pub fn fab_cycle_mean(&self) -> Option<f64> {
        let sum: f64 = self.product_cycle.iter().map(|r| r.sum).sum();
        let n: u64 = self.product_cycle.iter().map(|r| r.count).sum();
        (n > 0).then(|| sum / n as f64)
    }

    pub fn batch_log(&self) -> &[BatchStart] {
        &self.batch_log
    }

    pub fn lots_released(&self) -> usize {
        self.lots.len()
    }

    pub fn lots_completed(&self) -> usize {
        self.completed
    }

    pub fn event_queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Lots waiting at or being processed by operation `op`.
    pub fn op_wip(&self, op: usize) -> usize {
        self.op_wip[op].value as usize
    }

    /// Lots in flight located by scanning queues and loaded machines.
    pub fn lots_located(&self) -> usize {
        self.op_queues.iter().map(VecDeque::len).sum::<usize>()
            + self.machines.iter().map(|m| m.loaded_lots().len()).sum::<usize>()
    }

    /// Lot conservation and queue membership. Returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let in_flight = self.lots.iter().filter(|l| l.completion_time.is_none()).count();
        if self.lots.len() != self.completed + in_flight {
            return Err(format!(
                "released {} != completed {} + in flight {in_flight}",
                self.lots.len(),
                self.completed
            ));
        }
        let mut seen = vec![0u8; self.lots.len()];
        for (op, q) in self.op_queues.iter().enumerate() {
            for &l in q {
                seen[l] += 1;
                let lot = &self.lots[l];
                let route = &self.scenario.products[lot.product].route;
                if lot.completion_time.is_some() || route[lot.current_step] != op {
                    return Err(format!("lot {l} queued at wrong operation {op}"));
                }
            }
        }
        for m in &self.machines {
            for &l in m.loaded_lots() {
                seen[l] += 1;
            }
            if m.status == MachineStatus::Processing && !(m.busy_until >= self.clock) {
                return Err(format!("machine {} processing past busy_until", m.id));
            }
            if !(m.uptime_fraction <= 1.0 && m.efficiency_factor > 0.0) {
                return Err(format!("machine {} has out-of-range capacity", m.id));
            }
        }
        for (l, lot) in self.lots.iter().enumerate() {
            let expected = u8::from(lot.completion_time.is_none());
            if seen[l] != expected {
                return Err(format!("lot {l} located {} times", seen[l]));
            }
            let n = self.scenario.products[lot.product].route.len();
            if (lot.current_step == n) != lot.completion_time.is_some() {
                return Err(format!("lot {l} completion flag inconsistent with step"));
            }
        }
        Ok(())
    }

    /// Processes every event with time `<= until`, then sets the clock to `until`.
    pub fn advance(&mut self, until: f64) {
        assert!(until >= self.clock, "cannot advance backwards");
        while self.step_event(until).is_some() {}
        self.clock = until;
    }

    /// Processes the next event if it is due at or before `until`.
    pub fn step_event(&mut self, until: f64) -> Option<SimEvent> {
        match self.queue.peek_time() {
            Some(t) if t <= until => {}
            _ => return None,
        }
        let ev = self.queue.pop().expect("peeked");
        self.clock = ev.time;
        self.handle(ev);
        Some(ev)
    }

    fn handle(&mut self, ev: SimEvent) {
        let now = ev.time;
        match ev.kind {
            EventKind::LotArrival { product } => self.on_arrival(ev, product),
            EventKind::ProcessEnd { machine, epoch } => {
                if self.machines[machine].job_epoch == epoch {
                    self.on_process_end(ev, machine);
                }
            }
            EventKind::SetupEnd { machine, epoch } => {
                if self.machines[machine].job_epoch == epoch {
                    let op = self.machines[machine].job.as_ref().map(|j| j.op).unwrap_or(usize::MAX);
                    self.log_event(ev, || format!("{{\"machine\":{machine},\"op\":{op}}}"));
                    self.begin_processing(machine, now);
                }
            }
            EventKind::MachineDown { machine, epoch } => {
                if self.machines[machine].fail_epoch == epoch {
                    self.log_event(ev, || format!("{{\"machine\":{machine}}}"));
                    self.on_down(machine, now);
                }
            }
            EventKind::MachineUp { machine } => {
                self.log_event(ev, || format!("{{\"machine\":{machine}}}"));
                self.on_up(machine, now);
            }
            EventKind::PeriodBoundary => {
                let k = self.period_index + 1;
                self.log_event(ev, || format!("{{\"period\":{k}}}"));
                self.close_period(now);
                self.queue.push(now + self.scenario.decision_period_min, EventKind::PeriodBoundary);
            }
            EventKind::BatchTimeout { op } => {
                self.log_event(ev, || format!("{{\"op\":{op}}}"));
                self.dispatch_op(op, now);
            }
        }
    }

    fn log_event(&mut self, ev: SimEvent, payload: impl FnOnce() -> String) {
        if let Some(log) = self.log.as_mut() {
            log.push(format!("{}\t{}\t{}\t{}", ev.time, ev.seq, ev.kind.name(), payload()));
        }
    }

    fn on_arrival(&mut self, ev: SimEvent, product: usize) {
        let now = ev.time;
        let k = self.scenario.index().arrivals_by_product[product];
        let spec = &self.scenario.arrivals[k];
        let wafers = spec.wafers_per_lot;
        let gap = match spec.interarrival {
            Interarrival::Constant { interval_min } => interval_min,
            Interarrival::Exponential { mean_min } => self.rng.exp(product, mean_min),
        };
        let id = self.lots.len();
        let due_time = now + self.scenario.products[product].due_offset_min;
        self.lots.push(Lot {
            id,
            product,
            wafers,
            release_time: now,
            current_step: 0,
            step_entry_time: now,
            queue_entry_time: now,
            completion_time: None,
            due_time,
        });
        self.log_event(ev, || format!("{{\"lot\":{id},\"product\":{product},\"wafers\":{wafers}}}"));
        self.queue.push(now + gap, EventKind::LotArrival { product });
        let op = self.scenario.products[product].route[0];
        self.enqueue(id, op, now);
    }

    fn enqueue(&mut self, lot: LotId, op: usize, now: f64) {
        let wafers = self.lots[lot].wafers as f64;
        self.bump_wip(op, now, 1.0);
        self.bump_waiting(op, now, wafers);
        let l = &mut self.lots[lot];
        l.step_entry_time = now;
        l.queue_entry_time = now;
        self.op_queues[op].push_back(lot);
        let needs_timer = self.op_machines[op]
            .iter()
            .any(|&m| self.scenario.machines[m].min_batch > 1);
        if needs_timer && self.op_queues[op].len() == 1 {
            self.queue.push(now + self.scenario.batch_timeout_min, EventKind::BatchTimeout { op });
        }
        self.dispatch_op(op, now);
    }

    fn bump_wip(&mut self, op: usize, now: f64, delta: f64) {
        let area = self.op_wip[op].flush(now);
        self.period.ops[op].wip_lot_integral += area;
        self.op_wip[op].value += delta;
    }

    fn bump_waiting(&mut self, op: usize, now: f64, delta: f64) {
        let area = self.op_waiting_wafers[op].flush(now);
        self.period.ops[op].waiting_wafer_integral += area;
        self.op_waiting_wafers[op].value += delta;
    }

    fn dispatch_op(&mut self, op: usize, now: f64) {
        // Index loop: dispatching mutates `op_machines` only via actions.
        for k in 0..self.op_machines[op].len() {
            let m = self.op_machines[op][k];
            if self.machines[m].status == MachineStatus::Idle {
                self.dispatch_machine(m, now);
            }
        }
    }

    /// FIFO by queue entry across the machine's dedicated operations; batch
    /// operations qualify once `min_batch` lots wait or the head lot has
    /// waited out the batch timeout.
    fn dispatch_machine(&mut self, m: usize, now: f64) {
        if self.machines[m].status != MachineStatus::Idle {
            return;
        }
        let spec = &self.scenario.machines[m];
        let (min_batch, max_batch) = (spec.min_batch, spec.max_batch);
        let timeout = self.scenario.batch_timeout_min;
        let mut best: Option<(f64, usize)> = None;
        let mut waiting = 0usize;
        for &op in &self.machines[m].dedicated_ops {
            let q = &self.op_queues[op];
            let Some(&head) = q.front() else { continue };
            waiting += q.len();
            let entry = self.lots[head].queue_entry_time;
            let ready = q.len() >= min_batch || now >= entry + timeout;
            if !ready {
                continue;
            }
            if best.is_none_or(|(t, _)| entry < t) {
                best = Some((entry, op));
            }
        }
        let Some((head_entry, op)) = best else { return };

        let take = self.op_queues[op].len().min(max_batch);
        let lots: Vec<LotId> = self.op_queues[op].drain(..take).collect();
        let stats = &mut self.period.machines[m];
        stats.dispatch_queue_sum += waiting as f64;
        stats.dispatch_count += 1;
        let mut wafers = 0.0;
        for &l in &lots {
            let lot = &self.lots[l];
            let wait = now - lot.queue_entry_time;
            wafers += lot.wafers as f64;
            self.period.machines[m].queue_time_sum += wait;
            self.period.machines[m].queue_count += 1;
            self.period.ops[op].queue_time_sum += wait;
            self.period.ops[op].queue_count += 1;
        }
        self.bump_waiting(op, now, -wafers);
        if max_batch > 1 {
            self.batch_log.push(BatchStart { time: now, machine: m, op, size: lots.len(), head_wait: now - head_entry });
        }
        // A partial batch left behind needs its own timeout check.
        if let Some(&next) = self.op_queues[op].front() {
            if min_batch > 1 {
                let t = self.lots[next].queue_entry_time + timeout;
                self.queue.push(t.max(now), EventKind::BatchTimeout { op });
            }
        }

        let setup = self.scenario.operations[op].setup_min;
        let needs_setup = setup > 0.0 && self.machines[m].current_setup_key != Some(op);
        let machine = &mut self.machines[m];
        machine.current_setup_key = Some(op);
        machine.job = Some(Job { op, lots, phase: Phase::Setup, end: now, suspended: None, started: now });
        if needs_setup {
            machine.job_epoch += 1;
            let epoch = machine.job_epoch;
            machine.busy_until = now + setup;
            if let Some(j) = machine.job.as_mut() {
                j.end = now + setup;
            }
            self.set_status(m, MachineStatus::Setup, now);
            self.queue.push(now + setup, EventKind::SetupEnd { machine: m, epoch });
        } else {
            self.begin_processing(m, now);
        }
    }

    fn begin_processing(&mut self, m: usize, now: f64) {
        let op = self.machines[m].job.as_ref().expect("job to process").op;
        let duration = self.scenario.operations[op].processing_min * self.machines[m].efficiency_factor;
        let stats = &mut self.period.machines[m];
        if let Some(prev) = stats.last_start {
            stats.interval_sum += now - prev;
            stats.interval_count += 1;
        }
        stats.last_start = Some(now);
        stats.batches += 1;
        stats.processing_time_sum += duration;
        let machine = &mut self.machines[m];
        machine.job_epoch += 1;
        let epoch = machine.job_epoch;
        machine.busy_until = now + duration;
        if let Some(j) = machine.job.as_mut() {
            j.phase = Phase::Processing;
            j.end = now + duration;
            j.started = now;
        }
        self.set_status(m, MachineStatus::Processing, now);
        self.queue.push(now + duration, EventKind::ProcessEnd { machine: m, epoch });
    }

    fn on_process_end(&mut self, ev: SimEvent, m: usize) {
        let now = ev.time;
        let job = self.machines[m].job.take().expect("process end without job");
        let op = job.op;
        let product = self.scenario.index().op_product[op];
        let step = self.scenario.index().op_step[op];
        if self.log.is_some() {
            let mut lots = String::new();
            for (k, &l) in job.lots.iter().enumerate() {
                if k > 0 {
                    lots.push(',');
                }
                let _ = write!(lots, "[{l},{product},{step}]");
            }
            self.log_event(ev, || format!("{{\"machine\":{m},\"op\":{op},\"lots\":[{lots}]}}"));
        }
        self.set_status(m, MachineStatus::Idle, now);
        let opspec = &self.scenario.operations[op];
        let layer = self.scenario.families[opspec.family].layer;
        let optional = opspec.optional;
        let proc_time = now - job.started;
        let route_len = self.scenario.products[product].route.len();

        let mut next_moves = Vec::with_capacity(job.lots.len());
        for &l in &job.lots {
            self.bump_wip(op, now, -1.0);
            let lot = &mut self.lots[l];
            let wafers = lot.wafers;
            let at_op = now - lot.step_entry_time;
            let age = now - lot.release_time;
            lot.current_step += 1;
            let done = lot.current_step == route_len;
            if done {
                lot.completion_time = Some(now);
            }
            self.outputs.push(OpOutput { time: now, op, product, lot: l, wafers });

            let ms = &mut self.period.machines[m];
            ms.completed_lots += 1;
            ms.completed_wafers += wafers as u64;
            ms.cycle_time_sum += at_op;
            let os = &mut self.period.ops[op];
            os.completed_lots += 1;
            os.completed_wafers += wafers as u64;
            if layer {
                os.layer_wafers += wafers as u64;
            }
            if !optional {
                os.main_wafers += wafers as u64;
            }
            os.op_cycle_sum += at_op;
            os.processing_time_sum += proc_time;
            os.dynamic_cycle_sum += age;

            if done {
                self.completed += 1;
                self.product_cycle[product].push(age);
            } else {
                next_moves.push(l);
            }
        }
        let next_op = (step + 1 < route_len).then(|| self.scenario.products[product].route[step + 1]);
        if let Some(next_op) = next_moves.first().and(next_op) {
            for l in next_moves {
                self.enqueue(l, next_op, now);
            }
        }
        self.dispatch_machine(m, now);
    }

    fn set_status(&mut self, m: usize, status: MachineStatus, now: f64) {
        let machine = &mut self.machines[m];
        let elapsed = now - machine.status_since;
        let stats = &mut self.period.machines[m];
        match machine.status.bucket() {
            0 => stats.idle_min += elapsed,
            1 => stats.setup_min += elapsed,
            2 => stats.productive_min += elapsed,
            _ => stats.down_min += elapsed,
        }
        machine.status_since = now;
        machine.status = status;
    }

    fn mean_up_time(&self, m: usize) -> Option<f64> {
        let a = self.machines[m].uptime_fraction;
        (a < 1.0).then(|| a / (1.0 - a) * self.scenario.machines[m].mean_repair_min)
    }

    fn schedule_failure(&mut self, m: usize) {
        if let Some(mttf) = self.mean_up_time(m) {
            let stream = self.scenario.num_products() + m;
            let dt = self.rng.exp(stream, mttf);
            let epoch = self.machines[m].fail_epoch;
            self.queue.push(self.clock + dt, EventKind::MachineDown { machine: m, epoch });
        }
    }

    fn on_down(&mut self, m: usize, now: f64) {
        let machine = &mut self.machines[m];
        if let Some(job) = machine.job.as_mut() {
            job.suspended = Some(job.end - now);
            machine.job_epoch += 1;
        }
        self.set_status(m, MachineStatus::Down, now);
        let stream = self.scenario.num_products() + m;
        let repair = self.rng.exp(stream, self.scenario.machines[m].mean_repair_min);
        self.queue.push(now + repair, EventKind::MachineUp { machine: m });
    }

    fn on_up(&mut self, m: usize, now: f64) {
        let machine = &mut self.machines[m];
        let resumed = machine.job.as_mut().and_then(|job| {
            job.suspended.take().map(|left| {
                job.end = now + left;
                (job.phase, job.end)
            })
        });
        match resumed {
            Some((phase, end)) => {
                let epoch = machine.job_epoch;
                machine.busy_until = end;
                let (status, kind) = match phase {
                    Phase::Setup => (MachineStatus::Setup, EventKind::SetupEnd { machine: m, epoch }),
                    Phase::Processing => (MachineStatus::Processing, EventKind::ProcessEnd { machine: m, epoch }),
                };
                self.set_status(m, status, now);
                self.queue.push(end, kind);
            }
            None => self.set_status(m, MachineStatus::Idle, now),
        }
        self.schedule_failure(m);
        self.dispatch_machine(m, now);
    }

    fn close_period(&mut self, now: f64) {
        for m in 0..self.machines.len() {
            let status = self.machines[m].status;
            self.set_status(m, status, now);
        }
        for op in 0..self.op_queues.len() {
            self.bump_wip(op, now, 0.0);
            self.bump_waiting(op, now, 0.0);
        }
        self.period.end = now;
        let next = self.period.next(now);
        self.last_period = std::mem::replace(&mut self.period, next);
        self.period_index += 1;
    }

    pub fn is_dedicated(&self, m: usize, op: usize) -> bool {
        self.machines[m].dedicated_ops.binary_search(&op).is_ok()
    }

    /// Applies capacity changes; they persist for the rest of the episode.
    pub fn apply_action_set(&mut self, actions: &ActionSet) -> Result<(), SimError> {
        let n_m = self.machines.len();
        let n_o = self.op_queues.len();
        let check_machine = |m: usize| {
            if m < n_m {
                Ok(())
            } else {
                Err(SimError::InfeasibleAction(format!("unknown machine {m}")))
            }
        };
        for &m in actions.u_targets.iter().chain(&actions.r_targets) {
            check_machine(m)?;
        }
        // Validate dedication edits against the post-add state before mutating.
        let mut counts: Vec<usize> = self.op_machines.iter().map(Vec::len).collect();
        for &(m, op) in &actions.ded_adds {
            check_machine(m)?;
            if op >= n_o || self.scenario.operations[op].family != self.machines[m].family_id {
                return Err(SimError::InfeasibleAction(format!("machine {m} cannot run operation {op}")));
            }
            if self.is_dedicated(m, op) {
                return Err(SimError::InfeasibleAction(format!("machine {m} already runs operation {op}")));
            }
            counts[op] += 1;
        }
        for &(m, op) in &actions.ded_removes {
            check_machine(m)?;
            if op >= n_o || !self.is_dedicated(m, op) {
                return Err(SimError::InfeasibleAction(format!("machine {m} is not dedicated to operation {op}")));
            }
            if counts[op] <= 1 {
                return Err(SimError::InfeasibleAction(format!("removing machine {m} would leave operation {op} without machines")));
            }
            counts[op] -= 1;
        }

        let now = self.clock;
        for &m in &actions.u_targets {
            let machine = &mut self.machines[m];
            machine.uptime_fraction = (machine.uptime_fraction + UPTIME_STEP).min(1.0);
            if machine.status != MachineStatus::Down {
                // Memoryless failures: redraw the next one at the new rate.
                machine.fail_epoch += 1;
                self.schedule_failure(m);
            }
        }
        for &m in &actions.r_targets {
            self.machines[m].efficiency_factor *= EFFICIENCY_FACTOR;
        }
        for &(m, op) in &actions.ded_adds {
            let ops = &mut self.machines[m].dedicated_ops;
            let pos = ops.binary_search(&op).unwrap_err();
            ops.insert(pos, op);
            let ms = &mut self.op_machines[op];
            let pos = ms.binary_search(&m).unwrap_err();
            ms.insert(pos, m);
        }
        for &(m, op) in &actions.ded_removes {
            self.machines[m].dedicated_ops.retain(|&o| o != op);
            self.op_machines[op].retain(|&x| x != m);
        }
        for &(m, _) in &actions.ded_adds {
            self.dispatch_machine(m, now);
        }
        Ok(())
    }
}
