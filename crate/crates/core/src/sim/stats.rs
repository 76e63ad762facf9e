//! Per-period accumulators for machines and operations. One set is live
//! while the period runs; at each period boundary it is closed and kept as
//! the "last period" that feature extraction reads.

use serde::Serialize;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MachinePeriodStats {
    pub completed_lots: u64,
    pub completed_wafers: u64,
    /// Queue plus processing time at this machine's step, for lots it finished.
    pub cycle_time_sum: f64,
    pub queue_time_sum: f64,
    pub queue_count: u64,
    pub processing_time_sum: f64,
    pub batches: u64,
    pub productive_min: f64,
    pub down_min: f64,
    pub idle_min: f64,
    pub setup_min: f64,
    pub last_start: Option<f64>,
    pub interval_sum: f64,
    pub interval_count: u64,
    /// Lots waiting at dedicated operations, sampled at each dispatch.
    pub dispatch_queue_sum: f64,
    pub dispatch_count: u64,
}

impl MachinePeriodStats {
    /// Carries the last start time into the next period so interval
    /// time spans period boundaries.
    pub fn rolled(&self) -> Self {
        Self { last_start: self.last_start, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OpPeriodStats {
    pub completed_lots: u64,
    pub completed_wafers: u64,
    pub layer_wafers: u64,
    pub main_wafers: u64,
    /// Time integral of lots at the operation (queued or in process).
    pub wip_lot_integral: f64,
    /// Time integral of wafers queued but not in process.
    pub waiting_wafer_integral: f64,
    pub op_cycle_sum: f64,
    pub queue_time_sum: f64,
    pub queue_count: u64,
    pub processing_time_sum: f64,
    /// Sum of lot age (now minus release) at completion of this operation.
    pub dynamic_cycle_sum: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PeriodStats {
    pub start: f64,
    pub end: f64,
    pub machines: Vec<MachinePeriodStats>,
    pub ops: Vec<OpPeriodStats>,
}

impl PeriodStats {
    pub fn new(start: f64, n_machines: usize, n_ops: usize) -> Self {
        Self {
            start,
            end: start,
            machines: vec![MachinePeriodStats::default(); n_machines],
            ops: vec![OpPeriodStats::default(); n_ops],
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn next(&self, start: f64) -> Self {
        Self {
            start,
            end: start,
            machines: self.machines.iter().map(MachinePeriodStats::rolled).collect(),
            ops: vec![OpPeriodStats::default(); self.ops.len()],
        }
    }
}

/// Level tracker for time-averaged quantities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Level {
    pub value: f64,
    pub since: f64,
}

impl Level {
    /// Integral of the current level from `since` to `now`, then moves `since`.
    pub fn flush(&mut self, now: f64) -> f64 {
        let area = self.value * (now - self.since);
        self.since = now;
        area
    }
}

/// Running count and sum for an episode-long mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RunningMean {
    pub sum: f64,
    pub count: u64,
}

impl RunningMean {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}
