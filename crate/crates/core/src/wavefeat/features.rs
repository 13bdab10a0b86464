use chrono::{DateTime, Datelike, Timelike};

use super::wavelet::{split_low_high, WaveletConfig};
use crate::numcore::Array;
use crate::Result;

/// Missing-rate features, `T×N×2`: channel 0 is the node's missing fraction
/// over the window (constant along T), channel 1 the missing fraction across
/// nodes at that step (constant along N).
pub fn sparsity_features(mask: &Array) -> Array {
    let (t, n) = (mask.shape()[0], mask.shape()[1]);
    let m = mask.data();
    let node_missing: Vec<f64> = (0..n)
        .map(|j| (0..t).filter(|&s| m[s * n + j] == 0.0).count() as f64 / t as f64)
        .collect();
    let step_missing: Vec<f64> = (0..t)
        .map(|s| m[s * n..(s + 1) * n].iter().filter(|&&v| v == 0.0).count() as f64 / n as f64)
        .collect();
    let mut out = Vec::with_capacity(t * n * 2);
    for s in 0..t {
        for j in 0..n {
            out.push(node_missing[j]);
            out.push(step_missing[s]);
        }
    }
    Array::new(vec![t, n, 2], out).expect("T×N×2")
}

/// Calendar features, `T×N×2`: time of day in `[0, 1)` and ISO weekday / 7
/// (Monday = 1/7, Sunday = 1), broadcast over nodes. Timestamps are UTC.
pub fn time_features(timestamps: &[i64], n_nodes: usize) -> Array {
    let mut out = Vec::with_capacity(timestamps.len() * n_nodes * 2);
    for &ts in timestamps {
        let dt = DateTime::from_timestamp(ts, 0).unwrap_or_default();
        let tod = dt.num_seconds_from_midnight() as f64 / 86_400.0;
        let dow = dt.weekday().number_from_monday() as f64 / 7.0;
        for _ in 0..n_nodes {
            out.push(tod);
            out.push(dow);
        }
    }
    Array::new(vec![timestamps.len(), n_nodes, 2], out).expect("T×N×2")
}

/// Applies [`split_low_high`] to every node column of a `T×N` (or `T×N×1`)
/// array, returning the low and high parts as `T×N` arrays.
pub fn split_series(values: &Array, cfg: &WaveletConfig) -> Result<(Array, Array)> {
    let (t, n) = (values.shape()[0], values.shape()[1]);
    let v = values.data();
    let mut low = vec![0.0; t * n];
    let mut high = vec![0.0; t * n];
    let mut column = vec![0.0; t];
    for j in 0..n {
        for s in 0..t {
            column[s] = v[s * n + j];
        }
        let (l, h) = split_low_high(&column, cfg)?;
        for s in 0..t {
            low[s * n + j] = l[s];
            high[s * n + j] = h[s];
        }
    }
    Ok((Array::new(vec![t, n], low)?, Array::new(vec![t, n], high)?))
}
