use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrafficWindow;
use crate::numcore::Array;
use crate::{Error, Result};

/// Per-node sensor outages plus residual point missingness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    /// Probability that an outage starts at a given (node, step).
    pub failure_prob: f64,
    /// Outage length bounds in steps, inclusive.
    pub min_len: usize,
    pub max_len: usize,
    /// Point-missing rate applied after the outages.
    pub point_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum MissingKind {
    Point { rate: f64 },
    Block(BlockSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    pub kind: MissingKind,
    pub seed: u64,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl MissingKind {
    pub fn point(rate: f64) -> Self {
        MissingKind::Point { rate }
    }

    /// Outages of `U(12, 48)` steps with 5% residual point missingness.
    pub fn block(failure_prob: f64) -> Self {
        MissingKind::Block(BlockSpec {
            failure_prob,
            min_len: 12,
            max_len: 48,
            point_rate: 0.05,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MissingKind::Point { rate } => check_prob("rate", rate),
            MissingKind::Block(b) => b.validate(),
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        check_prob("failure_prob", self.failure_prob)?;
        check_prob("point_rate", self.point_rate)?;
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Invalid(format!(
                "outage lengths need 1 ≤ min_len ≤ max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

fn hide_points(w: &mut TrafficWindow, eval: &mut Array, rate: f64, rng: &mut ChaCha8Rng) {
    for (i, m) in w.mask.data_mut().iter_mut().enumerate() {
        if *m == 1.0 && rng.random::<f64>() < rate {
            *m = 0.0;
            eval.data_mut()[i] = 1.0;
        }
    }
}

/// Hides each observed cell independently with probability `rate`.
/// Returns the new window and the mask of newly hidden cells.
pub fn apply_point_missing(w: &TrafficWindow, rate: f64, seed: u64) -> Result<(TrafficWindow, Array)> {
    check_prob("rate", rate)?;
    let mut out = w.clone();
    let mut eval = Array::zeros(w.mask.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hide_points(&mut out, &mut eval, rate, &mut rng);
    Ok((out, eval))
}

/// Hides `[start, start + len)` of `node`, clipped to the series; cells that
/// were observed are marked in `eval`.
pub fn apply_outage(w: &mut TrafficWindow, eval: &mut Array, node: usize, start: usize, len: usize) {
    let (t, n) = (w.n_steps(), w.n_nodes());
    for step in start..(start + len).min(t) {
        let i = step * n + node;
        if w.mask.data()[i] == 1.0 {
            w.mask.data_mut()[i] = 0.0;
            eval.data_mut()[i] = 1.0;
        }
    }
}

/// Outage injection: for every node and step an outage starts with
/// probability `failure_prob` and lasts `U(min_len, max_len)` steps
/// (overlaps merge), then `point_rate` point hiding runs on what remains.
pub fn apply_block_missing(w: &TrafficWindow, spec: &BlockSpec, seed: u64) -> Result<(TrafficWindow, Array)> {
    spec.validate()?;
    let mut out = w.clone();
    let mut eval = Array::zeros(w.mask.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in 0..w.n_nodes() {
        for start in 0..w.n_steps() {
            if rng.random::<f64>() < spec.failure_prob {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                apply_outage(&mut out, &mut eval, node, start, len);
            }
        }
    }
    hide_points(&mut out, &mut eval, spec.point_rate, &mut rng);
    Ok((out, eval))
}

pub fn apply_missing(w: &TrafficWindow, spec: &MissingSpec) -> Result<(TrafficWindow, Array)> {
    match spec.kind {
        MissingKind::Point { rate } => apply_point_missing(w, rate, spec.seed),
        MissingKind::Block(b) => apply_block_missing(w, &b, spec.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{default_node_ids, regular_timestamps};

    fn full_window(t: usize, n: usize) -> TrafficWindow {
        TrafficWindow::new(
            Array::from_fn(&[t, n, 1], |i| i as f64),
            Array::full(&[t, n], 1.0),
            regular_timestamps(0, 5, t),
            5,
            default_node_ids(n),
        )
        .unwrap()
    }

    fn with_holes(t: usize, n: usize) -> TrafficWindow {
        let mut w = full_window(t, n);
        for (i, m) in w.mask.data_mut().iter_mut().enumerate() {
            if i % 7 == 3 {
                *m = 0.0;
            }
        }
        w
    }

    #[test]
    fn point_rate_zero_and_one() {
        let w = with_holes(20, 5);
        let (same, eval) = apply_point_missing(&w, 0.0, 1).unwrap();
        assert_eq!(same, w);
        assert!(eval.data().iter().all(|&e| e == 0.0));
        let (all, eval) = apply_point_missing(&w, 1.0, 1).unwrap();
        assert_eq!(eval, w.mask);
        assert!(all.mask.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn point_rate_within_binomial_bounds() {
        let w = full_window(100, 100);
        let (_, eval) = apply_point_missing(&w, 0.25, 42).unwrap();
        let hidden = eval.sum();
        let (mean, sd) = (2500.0, (10000.0f64 * 0.25 * 0.75).sqrt());
        assert!((hidden - mean).abs() < 3.0 * sd, "hidden {hidden}");
    }

    #[test]
    fn eval_mask_never_covers_original_gaps() {
        let w = with_holes(200, 9);
        for kind in [MissingKind::point(0.6), MissingKind::block(0.01)] {
            let (out, eval) = apply_missing(&w, &MissingSpec { kind, seed: 3 }).unwrap();
            for i in 0..eval.len() {
                if w.mask.data()[i] == 0.0 {
                    assert_eq!(eval.data()[i], 0.0);
                }
                if eval.data()[i] == 1.0 {
                    assert_eq!(out.mask.data()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn block_zero_is_identity() {
        let w = with_holes(50, 4);
        let spec = BlockSpec {
            failure_prob: 0.0,
            min_len: 12,
            max_len: 48,
            point_rate: 0.0,
        };
        let (out, eval) = apply_block_missing(&w, &spec, 9).unwrap();
        assert_eq!(out, w);
        assert_eq!(eval.sum(), 0.0);
    }

    #[test]
    fn forced_outage_hits_one_node() {
        let w = full_window(200, 6);
        let mut out = w.clone();
        let mut eval = Array::zeros(w.mask.shape());
        apply_outage(&mut out, &mut eval, 3, 100, 12);
        for t in 0..200 {
            for n in 0..6 {
                let hidden = n == 3 && (100..112).contains(&t);
                assert_eq!(out.observed(t, n), !hidden);
            }
        }
        assert_eq!(eval.sum(), 12.0);
        // clipped at the end of the series
        let mut tail = w.clone();
        apply_outage(&mut tail, &mut eval, 0, 195, 48);
        assert_eq!((0..200).filter(|&t| !tail.observed(t, 0)).count(), 5);
    }

    #[test]
    fn block_rate_near_thirty_percent() {
        let w = full_window(2000, 30);
        let (out, _) = apply_block_missing(&w, &BlockSpec { failure_prob: 0.01, min_len: 12, max_len: 48, point_rate: 0.05 }, 11).unwrap();
        let frac = 1.0 - out.observed_count() as f64 / 60000.0;
        assert!((frac - 0.30).abs() < 0.05, "hidden fraction {frac}");
    }

    #[test]
    fn validation() {
        assert!(apply_point_missing(&full_window(2, 2), 1.1, 0).is_err());
        let bad = BlockSpec { failure_prob: 0.1, min_len: 10, max_len: 5, point_rate: 0.0 };
        assert!(bad.validate().is_err());
    }
}
