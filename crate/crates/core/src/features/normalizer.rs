use serde::{Deserialize, Serialize};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-column count, mean and sum of squared deviations (Welford).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for (k, &x) in row.iter().enumerate() {
            let d = x - self.mean[k];
            self.mean[k] += d / n;
            self.m2[k] += d * (x - self.mean[k]);
        }
    }

    /// Count-weighted combination of two sets of statistics.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.dim() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * nb / n;
            self.m2[k] += other.m2[k] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Population variance, floored.
    pub fn variance(&self, k: usize) -> f64 {
        if self.count == 0 {
            return 1.0;
        }
        (self.m2[k] / self.count as f64).max(VARIANCE_FLOOR)
    }

    pub fn std(&self, k: usize) -> f64 {
        self.variance(k).sqrt()
    }
}

/// Index of each feature group inside the normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Machine = 0,
    Operation = 1,
    OpMachineEdge = 2,
    OpOpEdge = 3,
}

/// Running Z-score for the four feature groups.
///
/// Every observation is also recorded in a delta so that worker replicas can
/// hand back what they saw and have it merged into the shared copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub groups: Vec<RunningStats>,
    #[serde(skip)]
    delta: Option<Vec<RunningStats>>,
    pub frozen: bool,
}

impl FeatureNormalizer {
    pub fn new(dims: [usize; 4]) -> Self {
        Self { groups: dims.iter().map(|&d| RunningStats::new(d)).collect(), delta: None, frozen: false }
    }

    pub fn dims(&self) -> [usize; 4] {
        std::array::from_fn(|g| self.groups[g].dim())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Copy for a worker: same statistics, empty delta.
    pub fn replica(&self) -> Self {
        Self { groups: self.groups.clone(), delta: Some(self.empty_stats()), frozen: self.frozen }
    }

    fn empty_stats(&self) -> Vec<RunningStats> {
        self.groups.iter().map(|g| RunningStats::new(g.dim())).collect()
    }

    /// Observations made by this replica since it was created.
    pub fn take_delta(&mut self) -> Vec<RunningStats> {
        let fresh = self.empty_stats();
        self.delta.replace(fresh).unwrap_or_else(|| self.empty_stats())
    }

    pub fn merge_delta(&mut self, delta: &[RunningStats]) {
        for (g, d) in self.groups.iter_mut().zip(delta) {
            g.merge(d);
        }
    }

    /// Records a row unless frozen.
    pub fn observe(&mut self, group: Group, row: &[f64]) {
        if self.frozen {
            return;
        }
        self.groups[group as usize].push(row);
        if let Some(d) = self.delta.as_mut() {
            d[group as usize].push(row);
        }
    }

    pub fn normalize(&self, group: Group, row: &mut [f64]) {
        let s = &self.groups[group as usize];
        for (k, x) in row.iter_mut().enumerate() {
            *x = (*x - s.mean[k]) / s.std(k);
        }
    }

    pub fn denormalize(&self, group: Group, row: &mut [f64]) {
        let s = &self.groups[group as usize];
        for (k, x) in row.iter_mut().enumerate() {
            *x = *x * s.std(k) + s.mean[k];
        }
    }
}
