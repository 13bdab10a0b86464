use crate::datakit::{StaticGraph, TrafficWindow};
use crate::numcore::Array;
use crate::{Error, Result};

fn node_means(w: &TrafficWindow) -> (Vec<Option<f64>>, Option<f64>) {
    let (t, n) = (w.n_steps(), w.n_nodes());
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for s in 0..t {
        for j in 0..n {
            if w.observed(s, j) {
                sum[j] += w.value(s, j);
                count[j] += 1;
            }
        }
    }
    let total: usize = count.iter().sum();
    let global = (total > 0).then(|| sum.iter().sum::<f64>() / total as f64);
    let means = sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    (means, global)
}

/// Fills each hidden cell with its node's observed mean (the global mean
/// for a node that was never observed). Returns `T×N`.
pub fn mean_impute(w: &TrafficWindow) -> Result<Array> {
    let (means, global) = node_means(w);
    let global = global.ok_or_else(|| Error::Data("no observed cells to impute from".into()))?;
    let n = w.n_nodes();
    let data = (0..w.n_steps() * n)
        .map(|i| {
            if w.mask.data()[i] == 1.0 {
                w.values.data()[i]
            } else {
                means[i % n].unwrap_or(global)
            }
        })
        .collect();
    Ok(Array::new(vec![w.n_steps(), n], data)?)
}

/// Fills each hidden cell with the mean of its graph neighbours observed at
/// the same step, falling back to the node mean and then the global mean.
pub fn knn_impute(w: &TrafficWindow, graph: &StaticGraph) -> Result<Array> {
    let n = w.n_nodes();
    if graph.n_nodes != n {
        return Err(Error::Invalid(format!("graph has {} nodes, data has {n}", graph.n_nodes)));
    }
    let (means, global) = node_means(w);
    let global = global.ok_or_else(|| Error::Data("no observed cells to impute from".into()))?;
    let mut out = Vec::with_capacity(w.n_steps() * n);
    for t in 0..w.n_steps() {
        for j in 0..n {
            if w.observed(t, j) {
                out.push(w.value(t, j));
                continue;
            }
            let seen: Vec<f64> = graph.neighbors[j]
                .iter()
                .filter(|&&k| w.observed(t, k))
                .map(|&k| w.value(t, k))
                .collect();
            out.push(if seen.is_empty() {
                means[j].unwrap_or(global)
            } else {
                seen.iter().sum::<f64>() / seen.len() as f64
            });
        }
    }
    Ok(Array::new(vec![w.n_steps(), n], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{default_node_ids, regular_timestamps};

    fn window(values: &[f64], mask: &[f64], n: usize) -> TrafficWindow {
        let t = values.len() / n;
        TrafficWindow::new(
            Array::new(vec![t, n, 1], values.to_vec()).unwrap(),
            Array::new(vec![t, n], mask.to_vec()).unwrap(),
            regular_timestamps(0, 5, t),
            5,
            default_node_ids(n),
        )
        .unwrap()
    }

    #[test]
    fn fully_observed_is_identity() {
        let w = window(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 6], 2);
        let g = StaticGraph::new(vec![vec![1], vec![0]]).unwrap();
        assert_eq!(mean_impute(&w).unwrap(), w.values_2d());
        assert_eq!(knn_impute(&w, &g).unwrap(), w.values_2d());
    }

    #[test]
    fn single_gap_takes_node_mean() {
        // node 0 observes 6, 8 (mean 7); node 1 is complete
        let w = window(&[6.0, 1.0, 0.0, 2.0, 8.0, 3.0], &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0], 2);
        assert_eq!(mean_impute(&w).unwrap().get(&[1, 0]), 7.0);
    }

    #[test]
    fn knn_on_a_triangle_by_hand() {
        // every node neighbours the other two
        let g = StaticGraph::new(vec![vec![1, 2], vec![0, 2], vec![0, 1]]).unwrap();
        #[rustfmt::skip]
        let w = window(
            &[10.0, 20.0, 30.0,
              11.0, 99.0, 31.0,
              99.0, 99.0, 32.0,
              99.0, 99.0, 99.0],
            &[1.0, 1.0, 1.0,
              1.0, 0.0, 1.0,
              0.0, 0.0, 1.0,
              0.0, 0.0, 0.0],
            3,
        );
        let out = knn_impute(&w, &g).unwrap();
        // (11 + 31) / 2
        assert_eq!(out.get(&[1, 1]), 21.0);
        // only node 2 is seen at step 2
        assert_eq!(out.get(&[2, 0]), 32.0);
        assert_eq!(out.get(&[2, 1]), 32.0);
        // nothing seen at step 3: node means (10 + 11) / 2 and 20
        assert_eq!(out.get(&[3, 0]), 10.5);
        assert_eq!(out.get(&[3, 1]), 20.0);
    }

    #[test]
    fn never_observed_node_uses_global_mean() {
        let g = StaticGraph::new(vec![vec![1], vec![0]]).unwrap();
        let w = window(&[2.0, 0.0, 4.0, 0.0], &[1.0, 0.0, 1.0, 0.0], 2);
        assert_eq!(mean_impute(&w).unwrap().get(&[0, 1]), 3.0);
        let w = window(&[2.0, 0.0, 4.0, 0.0], &[0.0, 0.0, 1.0, 0.0], 2);
        // step 0: neighbour hidden, node 1 never seen → global mean 4
        assert_eq!(knn_impute(&w, &g).unwrap().get(&[0, 1]), 4.0);
        let empty = window(&[0.0; 4], &[0.0; 4], 2);
        assert!(mean_impute(&empty).is_err());
    }
}
