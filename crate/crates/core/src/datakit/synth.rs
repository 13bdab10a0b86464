use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::parse_timestamp;
use super::{build_knn_graph, default_node_ids, regular_timestamps, StaticGraph, TrafficWindow};
use crate::numcore::Array;
use crate::{Error, Result};

/// Steps per simulated day.
pub const DIURNAL_PERIOD: usize = 288;

const AR_COEFF: f64 = 0.98;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Standard deviation of the i.i.d. Gaussian noise.
    pub noise: f64,
    /// Scale of the graph-diffused shared component.
    pub diffusion_weight: f64,
    pub e_per_node: usize,
    pub interval_minutes: u32,
    pub start_timestamp: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            noise: 2.0,
            diffusion_weight: 20.0,
            e_per_node: 8,
            interval_minutes: 5,
            start_timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }
}

/// Synthetic traffic network: nodes uniform in the unit square, each with a
/// diurnal sinusoid whose phase drifts smoothly across space, plus an AR(1)
/// latent smoothed by two rounds of neighbour averaging, plus noise.
pub fn generate_synthetic(
    n_nodes: usize,
    n_steps: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<(TrafficWindow, StaticGraph, Array)> {
    if n_nodes < 4 {
        return Err(Error::Invalid(format!("synthetic networks need at least 4 nodes, got {n_nodes}")));
    }
    if n_steps == 0 {
        return Err(Error::Invalid("synthetic series needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<(f64, f64)> = (0..n_nodes).map(|_| (rng.random(), rng.random())).collect();
    let dist = Array::from_fn(&[n_nodes, n_nodes], |k| {
        let (a, b) = (pos[k / n_nodes], pos[k % n_nodes]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    });
    let graph = build_knn_graph(&dist, params.e_per_node.clamp(1, n_nodes - 1))?;

    let level: Vec<f64> = (0..n_nodes).map(|_| rng.random_range(60.0..140.0)).collect();
    let amp: Vec<f64> = (0..n_nodes).map(|_| rng.random_range(20.0..50.0)).collect();
    let phase: Vec<f64> = pos.iter().map(|&(x, y)| TAU * (0.3 * x + 0.2 * y)).collect();

    // latent[t][n]
    let innov = Normal::new(0.0, (1.0 - AR_COEFF * AR_COEFF).sqrt()).expect("valid sd");
    let mut latent = vec![vec![0.0; n_nodes]; n_steps];
    for n in 0..n_nodes {
        latent[0][n] = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    for t in 1..n_steps {
        for n in 0..n_nodes {
            latent[t][n] = AR_COEFF * latent[t - 1][n] + innov.sample(&mut rng);
        }
    }
    for _ in 0..2 {
        for row in latent.iter_mut() {
            let prev = row.clone();
            for (n, v) in row.iter_mut().enumerate() {
                let nb = &graph.neighbors[n];
                *v = (prev[n] + nb.iter().map(|&j| prev[j]).sum::<f64>()) / (nb.len() + 1) as f64;
            }
        }
    }

    let noise = Normal::new(0.0, params.noise.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut values = Vec::with_capacity(n_steps * n_nodes);
    for (t, row) in latent.iter().enumerate() {
        let angle = TAU * t as f64 / DIURNAL_PERIOD as f64;
        for n in 0..n_nodes {
            let eps = if params.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(level[n] + amp[n] * (angle + phase[n]).sin() + params.diffusion_weight * row[n] + eps);
        }
    }
    let start = parse_timestamp(&params.start_timestamp)?;
    let window = TrafficWindow::new(
        Array::new(vec![n_steps, n_nodes, 1], values)?,
        Array::full(&[n_steps, n_nodes], 1.0),
        regular_timestamps(start, params.interval_minutes, n_steps),
        params.interval_minutes,
        default_node_ids(n_nodes),
    )?;
    Ok((window, graph, dist))
}
