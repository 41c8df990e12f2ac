//! Static transition datasets: the on-disk format, loading, and mini-batch
//! sampling.
//!
//! On disk a dataset is a [`container`] whose JSON header carries
//! `{env_id, obs_dim, act_dim, max_action, count, manifest}` and whose payload
//! is `count` rows of little-endian `f32`: `obs, act, reward, next_obs, done`.
//! In memory the rows are split into columns.

pub mod container;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Real;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"POPO\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("header: {0}")]
    Header(String),
    #[error("{what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in row {row}, column {column}")]
    NonFinite { row: usize, column: &'static str },
    #[error("done flag in row {row} is {value}, expected 0 or 1")]
    InvalidDone { row: usize, value: f32 },
    #[error("dataset is empty")]
    Empty,
}

/// Provenance recorded by the dataset generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub episode_returns: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_return: Option<f64>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_action: f64,
    pub count: usize,
    pub manifest: Manifest,
}

impl DatasetHeader {
    /// Floats per stored row.
    pub fn row_width(&self) -> usize {
        2 * self.obs_dim + self.act_dim + 2
    }
}

/// One `(s, a, r, s', done)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub act: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub done: f32,
}

/// Immutable collection of transitions plus metadata and a SHA-256 content
/// hash of its canonical encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    obs: Vec<f32>,
    act: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
    hash: String,
}

/// Accumulates transitions before freezing them into a [`Dataset`].
#[derive(Debug, Clone)]
pub struct DatasetBuilder {
    env_id: String,
    obs_dim: usize,
    act_dim: usize,
    max_action: f64,
    obs: Vec<f32>,
    act: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
}

impl DatasetBuilder {
    pub fn new(env_id: impl Into<String>, obs_dim: usize, act_dim: usize, max_action: f64) -> Self {
        Self {
            env_id: env_id.into(),
            obs_dim,
            act_dim,
            max_action,
            obs: Vec::new(),
            act: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), DataError> {
        check_len("obs", self.obs_dim, t.obs.len())?;
        check_len("act", self.act_dim, t.act.len())?;
        check_len("next_obs", self.obs_dim, t.next_obs.len())?;
        self.obs.extend_from_slice(&t.obs);
        self.act.extend_from_slice(&t.act);
        self.reward.push(t.reward);
        self.next_obs.extend_from_slice(&t.next_obs);
        self.done.push(t.done);
        Ok(())
    }

    pub fn build(self, manifest: Manifest) -> Result<Dataset, DataError> {
        let header = DatasetHeader {
            env_id: self.env_id,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            max_action: self.max_action,
            count: self.reward.len(),
            manifest,
        };
        Dataset::from_columns(
            header,
            self.obs,
            self.act,
            self.reward,
            self.next_obs,
            self.done,
        )
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), DataError> {
    if expected != actual {
        return Err(DataError::DimMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

impl Dataset {
    pub fn from_columns(
        header: DatasetHeader,
        obs: Vec<f32>,
        act: Vec<f32>,
        reward: Vec<f32>,
        next_obs: Vec<f32>,
        done: Vec<f32>,
    ) -> Result<Self, DataError> {
        if header.obs_dim == 0 {
            return Err(DataError::DimMismatch {
                what: "obs_dim",
                expected: 1,
                actual: 0,
            });
        }
        if header.act_dim == 0 {
            return Err(DataError::DimMismatch {
                what: "act_dim",
                expected: 1,
                actual: 0,
            });
        }
        let n = header.count;
        check_len("obs column", n * header.obs_dim, obs.len())?;
        check_len("act column", n * header.act_dim, act.len())?;
        check_len("reward column", n, reward.len())?;
        check_len("next_obs column", n * header.obs_dim, next_obs.len())?;
        check_len("done column", n, done.len())?;
        let columns: [(&'static str, &[f32], usize); 5] = [
            ("obs", &obs, header.obs_dim),
            ("act", &act, header.act_dim),
            ("reward", &reward, 1),
            ("next_obs", &next_obs, header.obs_dim),
            ("done", &done, 1),
        ];
        for (column, values, width) in columns {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    row: i / width,
                    column,
                });
            }
        }
        if let Some(row) = done.iter().position(|&d| d != 0.0 && d != 1.0) {
            return Err(DataError::InvalidDone {
                row,
                value: done[row],
            });
        }
        let mut ds = Self {
            header,
            obs,
            act,
            reward,
            next_obs,
            done,
            hash: String::new(),
        };
        ds.hash = hex::encode(Sha256::digest(ds.to_bytes()));
        Ok(ds)
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn manifest(&self) -> &Manifest {
        &self.header.manifest
    }

    pub fn env_id(&self) -> &str {
        &self.header.env_id
    }

    pub fn obs_dim(&self) -> usize {
        self.header.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.header.act_dim
    }

    pub fn max_action(&self) -> f64 {
        self.header.max_action
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    /// Hex SHA-256 of the canonical file encoding.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn obs(&self) -> &[f32] {
        &self.obs
    }

    pub fn actions(&self) -> &[f32] {
        &self.act
    }

    pub fn rewards(&self) -> &[f32] {
        &self.reward
    }

    pub fn next_obs(&self) -> &[f32] {
        &self.next_obs
    }

    pub fn dones(&self) -> &[f32] {
        &self.done
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len() {
            return None;
        }
        let (o, a) = (self.header.obs_dim, self.header.act_dim);
        Some(Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            act: self.act[i * a..(i + 1) * a].to_vec(),
            reward: self.reward[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            done: self.done[i],
        })
    }

    /// Exact encoded size: preamble, header, and `count` rows of f32.
    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let (o, a) = (self.header.obs_dim, self.header.act_dim);
        let mut payload = Vec::with_capacity(self.len() * self.header.row_width() * 4);
        for i in 0..self.len() {
            container::f32s_to_le(self.obs[i * o..(i + 1) * o].iter().copied(), &mut payload);
            container::f32s_to_le(self.act[i * a..(i + 1) * a].iter().copied(), &mut payload);
            container::f32s_to_le([self.reward[i]], &mut payload);
            container::f32s_to_le(
                self.next_obs[i * o..(i + 1) * o].iter().copied(),
                &mut payload,
            );
            container::f32s_to_le([self.done[i]], &mut payload);
        }
        container::encode(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let (header_text, payload) = container::decode(bytes)?;
        let header: DatasetHeader =
            serde_json::from_str(header_text).map_err(|e| DataError::Header(e.to_string()))?;
        if header.obs_dim == 0 || header.act_dim == 0 {
            return Err(DataError::DimMismatch {
                what: if header.obs_dim == 0 {
                    "obs_dim"
                } else {
                    "act_dim"
                },
                expected: 1,
                actual: 0,
            });
        }
        let width = header.row_width();
        let expected = bytes.len() - payload.len() + header.count * width * 4;
        if bytes.len() < expected {
            return Err(DataError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(DataError::TrailingBytes {
                expected,
                actual: bytes.len(),
            });
        }
        let (o, a) = (header.obs_dim, header.act_dim);
        let n = header.count;
        let mut obs = Vec::with_capacity(n * o);
        let mut act = Vec::with_capacity(n * a);
        let mut reward = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n * o);
        let mut done = Vec::with_capacity(n);
        for row in payload.chunks_exact(width * 4) {
            let vals = container::le_to_f32s(row);
            obs.extend_from_slice(&vals[..o]);
            act.extend_from_slice(&vals[o..o + a]);
            reward.push(vals[o + a]);
            next_obs.extend_from_slice(&vals[o + a + 1..2 * o + a + 1]);
            done.push(vals[2 * o + a + 1]);
        }
        Self::from_columns(header, obs, act, reward, next_obs, done)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Uniform sampling with replacement.
    pub fn sample<T: Real, R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Batch<T>, DataError> {
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let indices: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..self.len()))
            .collect();
        Ok(self.gather(&indices))
    }

    pub fn gather<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let (o, a) = (self.header.obs_dim, self.header.act_dim);
        let mut b = Batch {
            size: indices.len(),
            obs_dim: o,
            act_dim: a,
            obs: Vec::with_capacity(indices.len() * o),
            act: Vec::with_capacity(indices.len() * a),
            reward: Vec::with_capacity(indices.len()),
            next_obs: Vec::with_capacity(indices.len() * o),
            done: Vec::with_capacity(indices.len()),
            indices: indices.to_vec(),
        };
        let cast = |v: &f32| T::of(*v as f64);
        for &i in indices {
            b.obs.extend(self.obs[i * o..(i + 1) * o].iter().map(cast));
            b.act.extend(self.act[i * a..(i + 1) * a].iter().map(cast));
            b.reward.push(cast(&self.reward[i]));
            b.next_obs
                .extend(self.next_obs[i * o..(i + 1) * o].iter().map(cast));
            b.done.push(cast(&self.done[i]));
        }
        b
    }

    /// Per-scalar-column min/max/mean plus header metadata.
    pub fn summary(&self) -> DatasetSummary {
        let (o, a) = (self.header.obs_dim, self.header.act_dim);
        let mut columns = Vec::new();
        let mut push = |name: String, values: &mut dyn Iterator<Item = f32>| {
            let mut stats = ColumnStats {
                name,
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                mean: 0.0,
            };
            let mut n = 0usize;
            let mut sum = 0.0f64;
            for v in values {
                let v = v as f64;
                stats.min = stats.min.min(v);
                stats.max = stats.max.max(v);
                sum += v;
                n += 1;
            }
            if n == 0 {
                stats.min = f64::NAN;
                stats.max = f64::NAN;
                stats.mean = f64::NAN;
            } else {
                stats.mean = sum / n as f64;
            }
            columns.push(stats);
        };
        for d in 0..o {
            push(
                format!("obs[{d}]"),
                &mut self.obs.iter().skip(d).step_by(o).copied(),
            );
        }
        for d in 0..a {
            push(
                format!("act[{d}]"),
                &mut self.act.iter().skip(d).step_by(a).copied(),
            );
        }
        push("reward".into(), &mut self.reward.iter().copied());
        for d in 0..o {
            push(
                format!("next_obs[{d}]"),
                &mut self.next_obs.iter().skip(d).step_by(o).copied(),
            );
        }
        push("done".into(), &mut self.done.iter().copied());
        DatasetSummary {
            env_id: self.header.env_id.clone(),
            count: self.len(),
            obs_dim: o,
            act_dim: a,
            max_action: self.header.max_action,
            content_hash: self.hash.clone(),
            columns,
            manifest: self.header.manifest.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub env_id: String,
    pub count: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_action: f64,
    pub content_hash: String,
    pub columns: Vec<ColumnStats>,
    pub manifest: Manifest,
}

/// Mini-batch in row-major training precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<T>,
    pub act: Vec<T>,
    pub reward: Vec<T>,
    pub next_obs: Vec<T>,
    pub done: Vec<T>,
    pub indices: Vec<usize>,
}
