//! Discrete-event simulation of a re-entrant wafer fab.
//!
//! Lots arrive per product, queue FIFO at product-specific operations and
//! are dispatched to dedicated machines. Batch tools wait for `min_batch`
//! lots or the batch timeout, sequence-dependent setups are charged when a
//! machine switches operation, and machines alternate between exponential
//! up-times and repairs so that their stationary availability equals the
//! current uptime fraction. The clock is in minutes; KPIs are in days.

mod event;
mod kpi;
mod state;
mod stats;

pub use event::{EventKind, EventQueue, SimEvent};
pub use kpi::{KpiReport, ProductKpi, Window, MIN_PER_DAY};
pub use state::{
    BatchStart, FabState, Lot, LotId, MachineState, MachineStatus, OpOutput, SimError,
    EFFICIENCY_FACTOR, UPTIME_STEP,
};
pub use stats::{MachinePeriodStats, OpPeriodStats, PeriodStats, RunningMean};

#[cfg(test)]
mod tests;
