//! Synthetic large-fab generator. Produces re-entrant routes over a
//! partitioned machine park with the structural statistics requested in
//! a [`GeneratorSpec`], and calibrates arrival rates so the most loaded
//! family sits at a target utilization before the load factor is applied.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ArrivalSpec, FamilySpec, Interarrival, MachineSpec, OperationSpec, Product, Scenario,
    ScenarioError, SigmaBudget,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub name: String,
    pub machines: usize,
    pub products: usize,
    pub families: usize,
    pub route_len_min: usize,
    pub route_len_max: usize,
    /// Exact operation count; route lengths are adjusted to sum to it.
    pub total_operations: Option<usize>,
    /// Multiplier on calibrated arrival rates.
    pub load_factor: f64,
    /// Utilization of the busiest family before `load_factor`.
    pub target_utilization: f64,
    pub batch_family_fraction: f64,
    pub setup_family_fraction: f64,
    /// Fraction of a family initially dedicated to each operation.
    pub dedication_fraction: f64,
    pub min_dedications: usize,
    pub decision_period_min: f64,
    pub horizon_periods: usize,
    pub warmup_periods: usize,
    pub sigma: SigmaBudget,
    pub wafers_per_lot: u32,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::midfab()
    }
}

impl GeneratorSpec {
    /// Published shape of the SMT2020 testbed: 10 products, 1,314 machines,
    /// 4,014 operations, route lengths 242 to 583, weekly decisions.
    pub fn smt2020_shape() -> Self {
        Self {
            name: "smt2020-shape".into(),
            machines: 1314,
            products: 10,
            families: 105,
            route_len_min: 242,
            route_len_max: 583,
            total_operations: Some(4014),
            load_factor: 1.25,
            target_utilization: 0.7,
            batch_family_fraction: 0.1,
            setup_family_fraction: 0.2,
            dedication_fraction: 0.6,
            min_dedications: 1,
            decision_period_min: 7.0 * 1440.0,
            horizon_periods: 25,
            warmup_periods: 1,
            sigma: SigmaBudget { uptime: 5, efficiency: 5, add: 5, remove: 5 },
            wafers_per_lot: 25,
        }
    }

    /// Mid-sized fab: 200 machines, about 600 operations, daily decisions.
    pub fn midfab() -> Self {
        Self {
            name: "midfab".into(),
            machines: 200,
            products: 3,
            families: 24,
            route_len_min: 180,
            route_len_max: 220,
            total_operations: Some(600),
            load_factor: 1.25,
            target_utilization: 0.7,
            batch_family_fraction: 0.1,
            setup_family_fraction: 0.2,
            dedication_fraction: 0.6,
            min_dedications: 1,
            decision_period_min: 1440.0,
            horizon_periods: 5,
            warmup_periods: 1,
            sigma: SigmaBudget { uptime: 5, efficiency: 5, add: 5, remove: 5 },
            wafers_per_lot: 25,
        }
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Infeasible(m));
        if self.machines == 0 || self.products == 0 || self.families == 0 {
            return bad("machine, product and family counts must be positive".into());
        }
        if self.families > self.machines {
            return bad(format!("{} families cannot be filled by {} machines", self.families, self.machines));
        }
        if self.min_dedications == 0 {
            return bad("min_dedications must be at least 1".into());
        }
        // Every family gets at least floor(machines / families) machines.
        if self.min_dedications > self.machines / self.families {
            return bad(format!(
                "{} dedications per operation exceed the smallest family size {}",
                self.min_dedications,
                self.machines / self.families
            ));
        }
        if self.route_len_min < 2 || self.route_len_max < self.route_len_min {
            return bad("route lengths need 2 <= min <= max".into());
        }
        if let Some(total) = self.total_operations {
            let (lo, hi) = (self.products * self.route_len_min, self.products * self.route_len_max);
            if total < lo || total > hi {
                return bad(format!("total_operations {total} outside [{lo}, {hi}]"));
            }
        }
        if !(self.load_factor > 0.0 && self.target_utilization > 0.0) {
            return bad("load_factor and target_utilization must be positive".into());
        }
        if !(self.decision_period_min > 0.0) || self.horizon_periods == 0 {
            return bad("decision period and horizon must be positive".into());
        }
        Ok(())
    }
}

/// Route lengths within bounds; when an exact total is requested the
/// extremes are pinned on the first two products so the reported range
/// is attained, and the rest are nudged by single steps until they sum up.
fn route_lengths(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (lo, hi) = (spec.route_len_min, spec.route_len_max);
    let mut lens: Vec<usize> = (0..spec.products).map(|_| rng.random_range(lo..=hi)).collect();
    let Some(total) = spec.total_operations else { return lens };
    let mut free_from = 0;
    if spec.products >= 2 && total >= lo + hi + (spec.products - 2) * lo && total <= lo + hi + (spec.products - 2) * hi {
        lens[0] = lo;
        lens[1] = hi;
        free_from = 2;
    }
    if free_from == spec.products {
        return lens;
    }
    let mut sum: usize = lens.iter().sum();
    while sum != total {
        let k = rng.random_range(free_from..spec.products);
        if sum < total && lens[k] < hi {
            lens[k] += 1;
            sum += 1;
        } else if sum > total && lens[k] > lo {
            lens[k] -= 1;
            sum -= 1;
        }
    }
    lens
}

pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<Scenario, ScenarioError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let families: Vec<FamilySpec> = (0..spec.families)
        .map(|f| FamilySpec { id: f, name: format!("F{f:03}"), layer: f % 7 == 0 })
        .collect();
    let is_batch: Vec<bool> = (0..spec.families).map(|_| rng.random_bool(spec.batch_family_fraction.clamp(0.0, 1.0))).collect();
    let has_setup: Vec<bool> = (0..spec.families).map(|_| rng.random_bool(spec.setup_family_fraction.clamp(0.0, 1.0))).collect();

    // Even base partition, remainder spread at random.
    let mut sizes = vec![spec.machines / spec.families; spec.families];
    for _ in 0..spec.machines % spec.families {
        sizes[rng.random_range(0..spec.families)] += 1;
    }
    let mut machines = Vec::with_capacity(spec.machines);
    let mut family_machines = vec![Vec::new(); spec.families];
    for (f, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            let id = machines.len();
            let (min_batch, max_batch) = if is_batch[f] { (2, 4) } else { (1, 1) };
            machines.push(MachineSpec {
                id,
                name: format!("M{id:04}"),
                family: f,
                min_batch,
                max_batch,
                base_uptime: rng.random_range(0.85..0.97),
                mean_repair_min: rng.random_range(30.0..240.0),
            });
            family_machines[f].push(id);
        }
    }

    let lens = route_lengths(spec, &mut rng);
    let mut operations = Vec::new();
    let mut products = Vec::with_capacity(spec.products);
    for (p, &len) in lens.iter().enumerate() {
        // Families drawn in proportion to their size keeps the workload
        // roughly balanced across the park.
        let mut fams: Vec<usize> = (0..len)
            .map(|_| family_machines_pick(&sizes, spec.machines, &mut rng))
            .collect();
        let mut seen = vec![false; spec.families];
        let reentrant = fams.iter().any(|&f| std::mem::replace(&mut seen[f], true));
        if !reentrant {
            fams[len - 1] = fams[0];
        }
        let mut route = Vec::with_capacity(len);
        let mut raw = 0.0;
        for (j, &f) in fams.iter().enumerate() {
            let id = operations.len();
            let processing_min = if is_batch[f] { rng.random_range(120.0..360.0) } else { rng.random_range(10.0..90.0) };
            let setup_min = if has_setup[f] { rng.random_range(10.0..30.0) } else { 0.0 };
            let pool = &family_machines[f];
            let k = ((pool.len() as f64 * spec.dedication_fraction).ceil() as usize)
                .clamp(spec.min_dedications, pool.len());
            let mut dedicated: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
            dedicated.sort_unstable();
            raw += processing_min;
            operations.push(OperationSpec {
                id,
                name: format!("P{p}-{j:03}"),
                family: f,
                processing_min,
                setup_min,
                optional: rng.random_bool(0.05),
                dedicated: Some(dedicated),
            });
            route.push(id);
        }
        products.push(Product { id: p, name: format!("P{p}"), route, due_offset_min: 3.0 * raw });
    }

    // Per-lot minutes of work each family receives when every product
    // releases one lot; batch tools divide by their mean batch size.
    let mut work = vec![0.0; spec.families];
    for o in &operations {
        let per_lot = if is_batch[o.family] { o.processing_min / 3.0 } else { o.processing_min };
        work[o.family] += per_lot;
    }
    let mut avail = vec![0.0; spec.families];
    for m in &machines {
        avail[m.family] += m.base_uptime;
    }
    let bottleneck = work
        .iter()
        .zip(&avail)
        .map(|(w, a)| w / a)
        .fold(0.0, f64::max);
    // One lot of every product per `cycle` minutes puts the bottleneck at
    // the target utilization.
    let cycle = bottleneck / spec.target_utilization;
    let mean_min = cycle / spec.load_factor;
    let arrivals = (0..spec.products)
        .map(|p| ArrivalSpec {
            product: p,
            interarrival: Interarrival::Exponential { mean_min },
            wafers_per_lot: spec.wafers_per_lot,
            first_arrival_min: None,
        })
        .collect();

    let mut s = Scenario::new(
        spec.name.clone(),
        spec.decision_period_min,
        spec.horizon_periods,
        spec.sigma,
        families,
        machines,
        operations,
        products,
        arrivals,
    )?;
    s.warmup_periods = spec.warmup_periods;
    Ok(s)
}

fn family_machines_pick(sizes: &[usize], total: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut r = rng.random_range(0..total);
    for (f, &n) in sizes.iter().enumerate() {
        if r < n {
            return f;
        }
        r -= n;
    }
    sizes.len() - 1
}
