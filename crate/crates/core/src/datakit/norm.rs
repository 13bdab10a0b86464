use serde::{Deserialize, Serialize};

use super::TrafficWindow;
use crate::numcore::Array;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-node mean and standard deviation over observed cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_window(w: &TrafficWindow) -> Self {
        let (t, n) = (w.n_steps(), w.n_nodes());
        let mut mean = vec![0.0; n];
        let mut std = vec![1.0; n];
        for node in 0..n {
            let obs: Vec<f64> = (0..t).filter(|&s| w.observed(s, node)).map(|s| w.value(s, node)).collect();
            if obs.is_empty() {
                continue;
            }
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / obs.len() as f64;
            mean[node] = m;
            std[node] = var.sqrt().max(STD_FLOOR);
        }
        Self { mean, std }
    }
}

/// Per-node z-scores over observed cells; hidden cells become 0.
pub fn normalize(w: &TrafficWindow) -> (TrafficWindow, NormStats) {
    let stats = NormStats::from_window(w);
    let n = w.n_nodes();
    let mut out = w.clone();
    for (i, v) in out.values.data_mut().iter_mut().enumerate() {
        let node = i % n;
        *v = if w.mask.data()[i] == 1.0 {
            (*v - stats.mean[node]) / stats.std[node]
        } else {
            0.0
        };
    }
    (out, stats)
}

/// Inverse of [`normalize`] for a `T×N` or `T×N×1` array.
pub fn denormalize(values: &Array, stats: &NormStats) -> Array {
    let n = stats.mean.len();
    let mut out = values.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let node = i % n;
        *v = *v * stats.std[node] + stats.mean[node];
    }
    out
}
