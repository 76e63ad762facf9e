//! Binary checkpoint container.
//!
//! All integers are little-endian `u32` unless noted, reals are `f64` LE.
//!
//! ```text
//! magic        b"FCAPCKPT"
//! version      u32
//! hidden       u32
//! layers       u32
//! feat dims    4 x u32   (machine, operation, op-machine edge, op-op edge)
//! hash len     u32, then that many UTF-8 bytes (scenario content hash)
//! n tensors    u32
//!   per tensor: name len u32, name bytes, rows u32, cols u32, rows*cols f64
//! normalizer   frozen u8, then per group (4):
//!   count u64, dim u32, dim f64 means, dim f64 squared-deviation sums
//! ```

use std::path::Path;

use super::{PolicyConfig, PolicyNet};
use crate::autodiff::{ParamStore, Tensor};
use crate::features::{FeatureNormalizer, RunningStats};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FCAPCKPT";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint {field} mismatch: expected {expected}, found {found}")]
    Mismatch { field: &'static str, expected: String, found: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub hidden: usize,
    pub layers: usize,
    pub feature_dims: [usize; 4],
    pub scenario_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub normalizer: FeatureNormalizer,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Format(e.to_string()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(net: &PolicyNet, normalizer: &FeatureNormalizer, scenario_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                hidden: net.config.hidden,
                layers: net.config.layers,
                feature_dims: net.config.feature_dims,
                scenario_hash: scenario_hash.to_string(),
            },
            params: net.params.clone(),
            normalizer: normalizer.clone(),
        }
    }

    pub fn config(&self) -> PolicyConfig {
        PolicyConfig { hidden: self.header.hidden, layers: self.header.layers, feature_dims: self.header.feature_dims }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.version.to_le_bytes());
        put_u32(&mut out, self.header.hidden);
        put_u32(&mut out, self.header.layers);
        for d in self.header.feature_dims {
            put_u32(&mut out, d);
        }
        put_str(&mut out, &self.header.scenario_hash);
        put_u32(&mut out, self.params.len());
        for id in 0..self.params.len() {
            let t = self.params.get(id);
            put_str(&mut out, self.params.name(id));
            put_u32(&mut out, t.rows);
            put_u32(&mut out, t.cols);
            put_f64s(&mut out, &t.data);
        }
        out.push(u8::from(self.normalizer.frozen));
        for g in &self.normalizer.groups {
            out.extend_from_slice(&g.count.to_le_bytes());
            put_u32(&mut out, g.dim());
            put_f64s(&mut out, &g.mean);
            put_f64s(&mut out, &g.m2);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Mismatch {
                field: "format version",
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let hidden = r.len()?;
        let layers = r.len()?;
        let mut feature_dims = [0; 4];
        for d in &mut feature_dims {
            *d = r.len()?;
        }
        let scenario_hash = r.string()?;
        let n = r.len()?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.len()?;
            let cols = r.len()?;
            let data = r.f64s(rows * cols)?;
            params.add(&name, Tensor::from_vec(rows, cols, data));
        }
        let frozen = r.u8()? != 0;
        let mut groups = Vec::with_capacity(4);
        for _ in 0..4 {
            let count = r.u64()?;
            let dim = r.len()?;
            let mean = r.f64s(dim)?;
            let m2 = r.f64s(dim)?;
            groups.push(RunningStats { count, mean, m2 });
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let mut normalizer = FeatureNormalizer::new(std::array::from_fn(|g| groups[g].dim()));
        normalizer.groups = groups;
        normalizer.frozen = frozen;
        if normalizer.dims() != feature_dims {
            return Err(CheckpointError::Format("normalizer dimensions disagree with header".into()));
        }
        Ok(Self {
            header: CheckpointHeader { version, hidden, layers, feature_dims, scenario_hash },
            params,
            normalizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&buf)
    }

    /// Rejects a checkpoint trained on a different scenario.
    pub fn check_scenario(&self, scenario_hash: &str) -> Result<(), CheckpointError> {
        if self.header.scenario_hash != scenario_hash {
            return Err(CheckpointError::Mismatch {
                field: "scenario hash",
                expected: scenario_hash.to_string(),
                found: self.header.scenario_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<PolicyNet, CheckpointError> {
        PolicyNet::with_params(self.config(), self.params.clone())
    }
}
