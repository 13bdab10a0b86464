use crate::numcore::Array;
use crate::{Error, Result};

/// Directed K-nearest-neighbour topology with a fixed fan-out per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticGraph {
    pub n_nodes: usize,
    pub e_per_node: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl StaticGraph {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n_nodes = neighbors.len();
        let e_per_node = neighbors.first().map_or(0, Vec::len);
        for (i, row) in neighbors.iter().enumerate() {
            if row.len() != e_per_node {
                return Err(Error::Data(format!("node {i} has {} neighbours, expected {e_per_node}", row.len())));
            }
            if let Some(&j) = row.iter().find(|&&j| j >= n_nodes || j == i) {
                return Err(Error::Data(format!("node {i} has invalid neighbour {j}")));
            }
        }
        Ok(Self {
            n_nodes,
            e_per_node,
            neighbors,
        })
    }

    /// Row-major `N·E` neighbour indices.
    pub fn flat_neighbors(&self) -> Vec<usize> {
        self.neighbors.iter().flatten().copied().collect()
    }
}

/// Each node's `e_per_node` closest other nodes, nearest first, ties broken
/// by lower index. The result is not symmetrized.
pub fn build_knn_graph(dist: &Array, e_per_node: usize) -> Result<StaticGraph> {
    let s = dist.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Data(format!("distance matrix must be square, got {s:?}")));
    }
    let n = s[0];
    if e_per_node == 0 || e_per_node >= n {
        return Err(Error::Invalid(format!("need 0 < E < N, got E = {e_per_node}, N = {n}")));
    }
    if dist.data().iter().any(|&d| d < 0.0 || d.is_nan()) {
        return Err(Error::Data("distances must be nonnegative".into()));
    }
    let neighbors = (0..n)
        .map(|i| {
            let row = dist.row(i);
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            others.truncate(e_per_node);
            others
        })
        .collect();
    StaticGraph::new(neighbors)
}
