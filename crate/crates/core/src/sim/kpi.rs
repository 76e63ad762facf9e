use serde::{Deserialize, Serialize};

use super::state::FabState;

pub const MIN_PER_DAY: f64 = 1440.0;

/// Half-open on the left: events at `start` belong to the previous window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_min: f64,
    pub end_min: f64,
}

impl Window {
    pub fn new(start_min: f64, end_min: f64) -> Self {
        assert!(end_min > start_min, "empty KPI window");
        Self { start_min, end_min }
    }

    pub fn days(&self) -> f64 {
        (self.end_min - self.start_min) / MIN_PER_DAY
    }

    fn contains(&self, t: f64) -> bool {
        t > self.start_min && t <= self.end_min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductKpi {
    pub product: usize,
    pub completed_lots: usize,
    pub avg_cycle_time_days: Option<f64>,
    /// Mean daily output over the product's operations.
    pub daily_going_rate: f64,
    pub wip_lots: usize,
    pub wip_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub window: Window,
    pub completed_lots: usize,
    /// Absent when no lot completed in the window.
    pub avg_cycle_time_days: Option<f64>,
    pub daily_going_rate: f64,
    pub per_product: Vec<ProductKpi>,
}

impl FabState {
    /// Throughput, cycle time and daily going rate over `window`.
    ///
    /// The going rate weights each product's mean daily operation output by
    /// its share of WIP lots at the window end (uniform when the fab is
    /// empty); outputs are counted in lots.
    pub fn kpi_report(&self, window: Window) -> KpiReport {
        assert!(window.end_min <= self.clock(), "KPI window extends past the simulated clock");
        let scenario = self.scenario();
        let n_p = scenario.num_products();
        let days = window.days();

        let mut op_counts = vec![0usize; scenario.num_operations()];
        for out in self.outputs() {
            if window.contains(out.time) {
                op_counts[out.op] += 1;
            }
        }

        let mut completed = vec![0usize; n_p];
        let mut cycle_sum = vec![0.0; n_p];
        let mut wip = vec![0usize; n_p];
        for lot in self.lots() {
            if lot.release_time > window.end_min {
                continue;
            }
            match lot.completion_time {
                Some(t) if t <= window.end_min => {
                    if t > window.start_min {
                        completed[lot.product] += 1;
                        cycle_sum[lot.product] += (t - lot.release_time) / MIN_PER_DAY;
                    }
                }
                _ => wip[lot.product] += 1,
            }
        }
        let total_wip: usize = wip.iter().sum();

        let mut per_product = Vec::with_capacity(n_p);
        let mut dgr = 0.0;
        for (p, product) in scenario.products.iter().enumerate() {
            let ratio = if total_wip == 0 { 1.0 / n_p as f64 } else { wip[p] as f64 / total_wip as f64 };
            let daily: f64 = product.route.iter().map(|&o| op_counts[o] as f64 / days).sum();
            let mean_daily = daily / product.route.len() as f64;
            dgr += ratio * mean_daily;
            per_product.push(ProductKpi {
                product: p,
                completed_lots: completed[p],
                avg_cycle_time_days: (completed[p] > 0).then(|| cycle_sum[p] / completed[p] as f64),
                daily_going_rate: mean_daily,
                wip_lots: wip[p],
                wip_ratio: ratio,
            });
        }
        let n: usize = completed.iter().sum();
        let ct: f64 = cycle_sum.iter().sum();
        KpiReport {
            window,
            completed_lots: n,
            avg_cycle_time_days: (n > 0).then(|| ct / n as f64),
            daily_going_rate: dgr,
            per_product,
        }
    }
}
