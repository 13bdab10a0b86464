use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nodes picked at one timestep: the `S` highest-scoring nodes followed by
/// `S` nodes drawn from the rest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub top_nodes: Vec<usize>,
    pub random_nodes: Vec<usize>,
}

impl SampleSet {
    pub fn all(&self) -> Vec<usize> {
        let mut v = self.top_nodes.clone();
        v.extend_from_slice(&self.random_nodes);
        v
    }

    pub fn len(&self) -> usize {
        self.top_nodes.len() + self.random_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `S = ⌈log₂ N⌉`, clamped to `⌊N/2⌋` so that `2S ≤ N`.
pub fn sample_size(n: usize) -> usize {
    let log = if n <= 1 { 0 } else { usize::BITS - (n - 1).leading_zeros() } as usize;
    log.min(n / 2)
}

/// Top-`S` by score (ties to the lower index), then `S` draws without
/// replacement from the remainder with probability ∝ softmax of their scores.
pub fn sample_nodes(scores: &[f64], rng: &mut impl Rng) -> Result<SampleSet> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Invalid(format!("sampling needs at least 2 nodes, got {n}")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("significance score of node {i}")));
    }
    let s = sample_size(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top_nodes = order[..s].to_vec();

    let mut rest: Vec<usize> = order[s..].to_vec();
    rest.sort_unstable();
    let max = rest.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = rest.iter().map(|&i| (scores[i] - max).exp()).collect();
    let mut random_nodes = Vec::with_capacity(s);
    for _ in 0..s {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = j;
                break;
            }
            u -= w;
        }
        // rounding can leave `pick` on an exhausted slot
        while weights[pick] == 0.0 {
            pick -= 1;
        }
        random_nodes.push(rest[pick]);
        weights[pick] = 0.0;
    }
    Ok(SampleSet { top_nodes, random_nodes })
}
