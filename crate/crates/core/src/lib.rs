pub mod action;
pub mod autodiff;
pub mod baselines;
pub mod eval;
pub mod features;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod trainer;

pub use action::{ActionSet, Head};
pub use scenario::{Scenario, ScenarioError};
pub use sim::{FabState, KpiReport, Window};
