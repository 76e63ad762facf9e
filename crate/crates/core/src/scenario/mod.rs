//! Fab scenario data model: products with their routes, machines grouped
//! into tool families, product-specific operations, arrival plans and
//! action budgets.
//!
//! Scenarios are stored as TOML with one array of tables per record kind
//! (`families`, `machines`, `operations`, `products`, `arrivals`). Every
//! record carries an `id` equal to its position. See `docs/scenario.md`
//! in the repository for the full schema.

mod generator;
pub mod toy;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use generator::{generate_synthetic, GeneratorSpec};

/// Bundled Minifab instance.
pub const MINIFAB_TOML: &str = include_str!("../../scenarios/minifab.toml");

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("infeasible generator spec: {0}")]
    Infeasible(String),
}

/// Per-action-type budgets: how many targets each head picks per step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigmaBudget {
    pub uptime: usize,
    pub efficiency: usize,
    pub add: usize,
    pub remove: usize,
}

impl SigmaBudget {
    pub fn total(&self) -> usize {
        self.uptime + self.efficiency + self.add + self.remove
    }

    /// Budgets in head order.
    pub fn as_array(&self) -> [usize; 4] {
        [self.uptime, self.efficiency, self.add, self.remove]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub id: usize,
    pub name: String,
    /// Layer-defining family (lithography); feeds the completed-layers feature.
    #[serde(default)]
    pub layer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub id: usize,
    pub name: String,
    pub family: usize,
    #[serde(default = "one")]
    pub min_batch: usize,
    #[serde(default = "one")]
    pub max_batch: usize,
    /// Stationary availability before any uptime action.
    #[serde(default = "one_f")]
    pub base_uptime: f64,
    /// Mean repair time; required when `base_uptime < 1`.
    #[serde(default)]
    pub mean_repair_min: f64,
}

impl MachineSpec {
    pub fn is_batch(&self) -> bool {
        self.max_batch > 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub id: usize,
    pub name: String,
    pub family: usize,
    /// Nominal processing time of one lot (or one batch on batch tools).
    pub processing_min: f64,
    /// Setup incurred when a machine switches to this operation.
    #[serde(default)]
    pub setup_min: f64,
    /// Optional steps are excluded from the main-process wafer count.
    #[serde(default)]
    pub optional: bool,
    /// Initially dedicated machines; defaults to the whole family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedicated: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: usize,
    pub name: String,
    /// Operation ids in processing order.
    pub route: Vec<usize>,
    /// Target cycle time; remaining-due-time features are measured against it.
    pub due_offset_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interarrival {
    Exponential { mean_min: f64 },
    Constant { interval_min: f64 },
}

impl Interarrival {
    pub fn mean_min(&self) -> f64 {
        match *self {
            Interarrival::Exponential { mean_min } => mean_min,
            Interarrival::Constant { interval_min } => interval_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub product: usize,
    pub interarrival: Interarrival,
    pub wafers_per_lot: u32,
    /// Fixed first release time; otherwise one interarrival draw from zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_arrival_min: Option<f64>,
}

/// Lookup tables derived from a validated scenario.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioIndex {
    pub op_product: Vec<usize>,
    pub op_step: Vec<usize>,
    pub family_machines: Vec<Vec<usize>>,
    pub initial_dedication: Vec<Vec<usize>>,
    /// Nominal processing time from this step to the end of the route.
    pub remaining_processing_min: Vec<f64>,
    pub arrivals_by_product: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Simulated minutes between decision steps.
    pub decision_period_min: f64,
    /// Decision steps per episode.
    pub horizon_periods: usize,
    /// Periods simulated before the first decision step.
    #[serde(default = "one")]
    pub warmup_periods: usize,
    #[serde(default = "default_batch_timeout")]
    pub batch_timeout_min: f64,
    pub sigma: SigmaBudget,
    pub families: Vec<FamilySpec>,
    pub machines: Vec<MachineSpec>,
    pub operations: Vec<OperationSpec>,
    pub products: Vec<Product>,
    pub arrivals: Vec<ArrivalSpec>,
    #[serde(skip)]
    index: ScenarioIndex,
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.decision_period_min == other.decision_period_min
            && self.horizon_periods == other.horizon_periods
            && self.warmup_periods == other.warmup_periods
            && self.batch_timeout_min == other.batch_timeout_min
            && self.sigma == other.sigma
            && self.families == other.families
            && self.machines == other.machines
            && self.operations == other.operations
            && self.products == other.products
            && self.arrivals == other.arrivals
    }
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn default_batch_timeout() -> f64 {
    120.0
}

impl Scenario {
    /// Assembles and validates a scenario from its records.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        decision_period_min: f64,
        horizon_periods: usize,
        sigma: SigmaBudget,
        families: Vec<FamilySpec>,
        machines: Vec<MachineSpec>,
        operations: Vec<OperationSpec>,
        products: Vec<Product>,
        arrivals: Vec<ArrivalSpec>,
    ) -> Result<Self, ScenarioError> {
        let mut s = Scenario {
            name: name.into(),
            decision_period_min,
            horizon_periods,
            warmup_periods: 1,
            batch_timeout_min: default_batch_timeout(),
            sigma,
            families,
            machines,
            operations,
            products,
            arrivals,
            index: ScenarioIndex::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn minifab() -> Self {
        Self::from_toml_str(MINIFAB_TOML).expect("bundled minifab scenario is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ScenarioError::Schema {
            path: ".".into(),
            message: e.to_string(),
        })?;
        let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Loads `path`, or the bundled scenario when `path` is `minifab`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        if path.as_os_str() == "minifab" && !path.exists() {
            return Ok(Self::minifab());
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml_string())
    }

    /// Content hash over the canonical JSON form; checkpoints and run
    /// manifests use it to pin the scenario they were produced on.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes to JSON");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn index(&self) -> &ScenarioIndex {
        &self.index
    }

    pub fn num_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn num_operations(&self) -> usize {
        self.operations.len()
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    /// Episode length in minutes including warm-up.
    pub fn episode_min(&self) -> f64 {
        (self.warmup_periods + self.horizon_periods) as f64 * self.decision_period_min
    }

    pub fn warmup_min(&self) -> f64 {
        self.warmup_periods as f64 * self.decision_period_min
    }

    /// Raw processing time of the shortest route, in minutes.
    pub fn min_route_processing_min(&self) -> f64 {
        self.products
            .iter()
            .map(|p| self.index.remaining_processing_min[p.route[0]])
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks every invariant and rebuilds the lookup index.
    pub fn validate(&mut self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.decision_period_min > 0.0) {
            return invalid("decision_period_min must be positive".into());
        }
        if self.horizon_periods == 0 {
            return invalid("horizon_periods must be at least 1".into());
        }
        if !(self.batch_timeout_min >= 0.0) {
            return invalid("batch_timeout_min must be non-negative".into());
        }
        if self.machines.is_empty() || self.operations.is_empty() || self.products.is_empty() {
            return invalid("scenario needs machines, operations and products".into());
        }
        for (i, f) in self.families.iter().enumerate() {
            if f.id != i {
                return invalid(format!("family `{}` has id {} at position {i}", f.name, f.id));
            }
        }
        let mut family_machines = vec![Vec::new(); self.families.len()];
        for (i, m) in self.machines.iter().enumerate() {
            if m.id != i {
                return invalid(format!("machine `{}` has id {} at position {i}", m.name, m.id));
            }
            if m.family >= self.families.len() {
                return invalid(format!("machine `{}` references unknown family {}", m.name, m.family));
            }
            if m.min_batch == 0 || m.max_batch < m.min_batch {
                return invalid(format!("machine `{}` needs 1 <= min_batch <= max_batch", m.name));
            }
            if !(m.base_uptime > 0.0 && m.base_uptime <= 1.0) {
                return invalid(format!("machine `{}` base_uptime must lie in (0, 1]", m.name));
            }
            if m.base_uptime < 1.0 && !(m.mean_repair_min > 0.0) {
                return invalid(format!("machine `{}` can fail but has no positive mean_repair_min", m.name));
            }
            family_machines[m.family].push(i);
        }

        let n_ops = self.operations.len();
        let mut initial_dedication = Vec::with_capacity(n_ops);
        for (i, o) in self.operations.iter().enumerate() {
            if o.id != i {
                return invalid(format!("operation `{}` has id {} at position {i}", o.name, o.id));
            }
            if o.family >= self.families.len() {
                return invalid(format!("operation `{}` references unknown family {}", o.name, o.family));
            }
            if !(o.processing_min > 0.0 && o.processing_min.is_finite()) {
                return invalid(format!("operation `{}` processing_min must be positive", o.name));
            }
            if !(o.setup_min >= 0.0) {
                return invalid(format!("operation `{}` setup_min must be non-negative", o.name));
            }
            let compatible = &family_machines[o.family];
            if compatible.is_empty() {
                return invalid(format!("operation `{}` has no compatible machine", o.name));
            }
            let ded = match &o.dedicated {
                Some(list) => {
                    let mut list = list.clone();
                    list.sort_unstable();
                    list.dedup();
                    if list.is_empty() {
                        return invalid(format!("operation `{}` has no dedicated machine", o.name));
                    }
                    if let Some(&m) = list.iter().find(|m| !compatible.contains(m)) {
                        return invalid(format!(
                            "operation `{}` dedicates machine {m} outside family {}",
                            o.name, o.family
                        ));
                    }
                    list
                }
                None => compatible.clone(),
            };
            initial_dedication.push(ded);
        }

        let mut op_product = vec![usize::MAX; n_ops];
        let mut op_step = vec![usize::MAX; n_ops];
        let mut remaining = vec![0.0; n_ops];
        for (i, p) in self.products.iter().enumerate() {
            if p.id != i {
                return invalid(format!("product `{}` has id {} at position {i}", p.name, p.id));
            }
            if p.route.is_empty() {
                return invalid(format!("product `{}` has an empty route", p.name));
            }
            if !(p.due_offset_min > 0.0) {
                return invalid(format!("product `{}` due_offset_min must be positive", p.name));
            }
            for (j, &o) in p.route.iter().enumerate() {
                if o >= n_ops {
                    return invalid(format!("product `{}` step {j} references unknown operation {o}", p.name));
                }
                if op_product[o] != usize::MAX {
                    return invalid(format!("operation {o} appears in more than one route position"));
                }
                op_product[o] = i;
                op_step[o] = j;
            }
            let mut acc = 0.0;
            for &o in p.route.iter().rev() {
                acc += self.operations[o].processing_min;
                remaining[o] = acc;
            }
        }
        if let Some(o) = op_product.iter().position(|&p| p == usize::MAX) {
            return invalid(format!("operation {o} is not on any route"));
        }

        let mut arrivals_by_product = vec![usize::MAX; self.products.len()];
        for (k, a) in self.arrivals.iter().enumerate() {
            if a.product >= self.products.len() {
                return invalid(format!("arrival {k} references unknown product {}", a.product));
            }
            if arrivals_by_product[a.product] != usize::MAX {
                return invalid(format!("product {} has more than one arrival stream", a.product));
            }
            if !(a.interarrival.mean_min() > 0.0) {
                return invalid(format!("arrival {k} interarrival must be positive"));
            }
            if a.wafers_per_lot == 0 {
                return invalid(format!("arrival {k} wafers_per_lot must be positive"));
            }
            if let Some(t) = a.first_arrival_min {
                if !(t >= 0.0) {
                    return invalid(format!("arrival {k} first_arrival_min must be non-negative"));
                }
            }
            arrivals_by_product[a.product] = k;
        }

        self.index = ScenarioIndex {
            op_product,
            op_step,
            family_machines,
            initial_dedication,
            remaining_processing_min: remaining,
            arrivals_by_product,
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_minifab_matches_testbed_counts() {
        let s = Scenario::minifab();
        assert_eq!(s.num_products(), 3);
        assert_eq!(s.num_machines(), 5);
        assert_eq!(s.num_operations(), 18);
        assert!(s.products.iter().all(|p| p.route.len() == 6));
        assert_eq!(s.sigma, SigmaBudget { uptime: 1, efficiency: 1, add: 0, remove: 0 });
    }

    #[test]
    fn toml_round_trip_is_structurally_equal() {
        let s = Scenario::minifab();
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.index(), back.index());
        assert_eq!(s.content_hash(), back.content_hash());
    }

    #[test]
    fn operation_without_compatible_machine_is_rejected() {
        let mut s = Scenario::minifab();
        s.families.push(FamilySpec { id: s.families.len(), name: "empty".into(), layer: false });
        s.operations[4].family = s.families.len() - 1;
        s.operations[4].dedicated = None;
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("no compatible machine"), "{err}");
    }

    #[test]
    fn empty_dedication_is_rejected() {
        let mut s = Scenario::minifab();
        s.operations[0].dedicated = Some(vec![]);
        assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn schema_error_names_field_path() {
        let text = MINIFAB_TOML.replacen("family = 0", "family = \"diffusion\"", 1);
        let err = Scenario::from_toml_str(&text).unwrap_err();
        match err {
            ScenarioError::Schema { path, .. } => assert!(path.starts_with("machines[0]"), "{path}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Scenario::load("/nonexistent/dir/x.toml").unwrap_err();
        assert!(matches!(err, ScenarioError::Io { .. }));
    }

    #[test]
    fn shared_operation_is_rejected() {
        let mut s = Scenario::minifab();
        let o = s.products[0].route[0];
        s.products[1].route[0] = o;
        assert!(s.validate().is_err());
    }
}
