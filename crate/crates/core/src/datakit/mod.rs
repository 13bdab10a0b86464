//! Traffic series model, CSV ingestion, static K-NN topology, missing-pattern
//! injection, normalization and synthetic network generation.

mod graph;
mod io;
mod missing;
mod norm;
mod synth;

pub use graph::{build_knn_graph, StaticGraph};
pub use io::{
    load_dataset, load_dir, read_dist_csv, read_mask_csv, read_meta, save_dataset, write_dist_csv,
    write_mask_csv, write_values_csv, Meta,
};
pub use missing::{
    apply_block_missing, apply_missing, apply_outage, apply_point_missing, BlockSpec, MissingKind,
    MissingSpec,
};
pub use norm::{denormalize, normalize, NormStats, STD_FLOOR};
pub use synth::{generate_synthetic, SynthParams, DIURNAL_PERIOD};

use crate::numcore::Array;
use crate::{Error, Result};

/// A `T × N` traffic series with one channel.
///
/// `values` is `T×N×1`, `mask` is `T×N` with 1 = observed. Cells with mask 0
/// may hold any number on ingestion; [`normalize`] zero-fills them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficWindow {
    pub values: Array,
    pub mask: Array,
    /// Epoch seconds, one per step.
    pub timestamps: Vec<i64>,
    pub interval_minutes: u32,
    pub node_ids: Vec<String>,
}

impl TrafficWindow {
    pub fn new(
        values: Array,
        mask: Array,
        timestamps: Vec<i64>,
        interval_minutes: u32,
        node_ids: Vec<String>,
    ) -> Result<Self> {
        let w = Self {
            values,
            mask,
            timestamps,
            interval_minutes,
            node_ids,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let vs = self.values.shape();
        if vs.len() != 3 || vs[2] != 1 || vs[0] == 0 || vs[1] == 0 {
            return Err(Error::Data(format!("values must be T×N×1 with T, N ≥ 1, got {vs:?}")));
        }
        if self.mask.shape() != &vs[..2] {
            return Err(Error::Data(format!(
                "mask shape {:?} does not match values {vs:?}",
                self.mask.shape()
            )));
        }
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Data("mask entries must be 0 or 1".into()));
        }
        if self.timestamps.len() != vs[0] || self.node_ids.len() != vs[1] {
            return Err(Error::Data("timestamp or node-id count disagrees with values".into()));
        }
        if self.interval_minutes == 0 {
            return Err(Error::Data("interval_minutes must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[1]
    }

    #[inline]
    pub fn value(&self, t: usize, n: usize) -> f64 {
        self.values.data()[t * self.n_nodes() + n]
    }

    #[inline]
    pub fn observed(&self, t: usize, n: usize) -> bool {
        self.mask.data()[t * self.n_nodes() + n] == 1.0
    }

    pub fn observed_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }

    /// Steps `[start, start + len)` as a new window.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let (t, n) = (self.n_steps(), self.n_nodes());
        if len == 0 || start + len > t {
            return Err(Error::Invalid(format!("slice [{start}, {}) outside 0..{t}", start + len)));
        }
        let values = Array::new(vec![len, n, 1], self.values.data()[start * n..(start + len) * n].to_vec())?;
        let mask = Array::new(vec![len, n], self.mask.data()[start * n..(start + len) * n].to_vec())?;
        Ok(Self {
            values,
            mask,
            timestamps: self.timestamps[start..start + len].to_vec(),
            interval_minutes: self.interval_minutes,
            node_ids: self.node_ids.clone(),
        })
    }

    /// Values as a plain `T×N` array.
    pub fn values_2d(&self) -> Array {
        self.values
            .reshape(&[self.n_steps(), self.n_nodes()])
            .expect("T×N×1 reshapes to T×N")
    }
}

pub fn default_node_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

pub fn regular_timestamps(start: i64, interval_minutes: u32, steps: usize) -> Vec<i64> {
    (0..steps as i64).map(|i| start + i * interval_minutes as i64 * 60).collect()
}
