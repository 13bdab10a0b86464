//! Whitening-based training, windowed evaluation, gradient checking and the
//! two sanity baselines.
//!
//! Training hides a fraction of the currently observed cells in each window
//! and learns to reconstruct them; cells that were already missing (including
//! any evaluation holdout) never reach the loss.

mod baselines;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{knn_impute, mean_impute};

use crate::datakit::{apply_missing, normalize, MissingKind, MissingSpec, NormStats, StaticGraph, TrafficWindow};
use crate::moe::{merge_with_observed, ForwardOptions, ModelSampling, ModelShape, MoeConfig, StamModel};
use crate::numcore::{check_parameter_gradients, Adam, AdamConfig, Array, GradCheckReport, NumError, Tape, Var};
use crate::wavefeat::WaveletConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub window: usize,
    pub optimizer: AdamConfig,
    /// Pattern used to hide observed cells for supervision.
    pub whiten: MissingKind,
    pub seed: u64,
    /// Sampling seed used whenever the model is evaluated.
    pub eval_seed: u64,
    /// Trailing share of the series held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            window: 24,
            optimizer: AdamConfig::default(),
            whiten: MissingKind::point(0.25),
            seed: 0,
            eval_seed: 7,
            validation_fraction: 0.2,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, series_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.epochs == 0 || self.batch_size == 0 || self.window == 0 {
            return bad("epochs, batch_size and window must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        let train_len = self.train_len(series_len);
        if self.window > train_len {
            return bad(format!("window {} exceeds the {train_len}-step training span", self.window));
        }
        self.whiten.validate()?;
        let rate = match self.whiten {
            MissingKind::Point { rate } => rate,
            MissingKind::Block(b) => b.failure_prob.max(b.point_rate),
        };
        if rate <= 0.0 || rate >= 1.0 {
            return bad(format!("whitening rate must lie in (0, 1), got {rate}"));
        }
        Ok(())
    }

    pub fn train_len(&self, series_len: usize) -> usize {
        series_len - (series_len as f64 * self.validation_fraction).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    /// Mean whitened-cell MAE per optimizer step (normalized units).
    pub loss_history: Vec<f64>,
    /// Validation MAE per epoch (normalized units).
    pub val_history: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn check_mask(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<usize> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Invalid(format!(
            "masked_mae: lengths {}, {}, {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::Invalid("masked_mae over an empty mask is undefined".into()));
    }
    Ok(count)
}

/// Mean `|pred − target|` over cells where `mask` is 1.
pub fn masked_mae(pred: &Array, target: &Array, mask: &Array) -> Result<f64> {
    let count = check_mask(pred.data(), target.data(), mask.data())?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((p, t), m)| m * (p - t).abs())
        .sum();
    Ok(total / count as f64)
}

/// Tape version of [`masked_mae`]; `pred` may be `T×N×1` against `T×N` targets.
pub fn masked_mae_var(tape: &mut Tape, pred: Var, target: &Array, mask: &Array) -> Result<Var> {
    let count = check_mask(tape.value(pred).data(), target.data(), mask.data())?;
    let target = tape.constant(target.reshape(tape.shape(pred))?);
    let mask = tape.constant(mask.reshape(tape.shape(pred))?);
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    let kept = tape.mul(abs, mask)?;
    let total = tape.sum(kept);
    Ok(tape.scale(total, 1.0 / count as f64))
}

pub fn metrics(pred: &Array, truth: &Array, mask: &Array) -> Result<Metrics> {
    let mae = masked_mae(pred, truth, mask)?;
    let cells = mask.data().iter().filter(|&&m| m != 0.0).count();
    let sq: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .zip(mask.data())
        .map(|((p, t), m)| m * (p - t).powi(2))
        .sum();
    Ok(Metrics {
        mae,
        rmse: (sq / cells as f64).sqrt(),
        cells,
    })
}

/// Window starts tiling `[0, len)` without overlap; the last window is
/// pulled back to end at `len`. Each start is paired with the first step of
/// its window not already covered.
pub fn tile_windows(len: usize, window: usize) -> Vec<(usize, usize)> {
    let window = window.min(len);
    let mut out = Vec::new();
    let mut covered = 0;
    while covered < len {
        let start = covered.min(len - window);
        out.push((start, covered - start));
        covered = start + window;
    }
    out
}

/// Normalized predictions `T×N×1` over a whole normalized series, stitched
/// from [`tile_windows`].
pub fn predict_series(model: &StamModel, series: &TrafficWindow, graph: &StaticGraph, seed: u64) -> Result<Array> {
    let (t, n) = (series.n_steps(), series.n_nodes());
    let window = model.shape.t_max.min(t);
    let mut out = vec![0.0; t * n];
    for (start, skip) in tile_windows(t, window) {
        let w = series.slice(start, window)?;
        let y = model.predict(&w, graph, seed.wrapping_add(start as u64))?;
        let from = (start + skip) * n;
        out[from..(start + window) * n].copy_from_slice(&y.data()[skip * n..]);
    }
    Ok(Array::new(vec![t, n, 1], out)?)
}

/// Dynamic adjacencies `T×N×N` over a whole normalized series, one per
/// LrSGAT layer (identity layers contribute nothing), stitched like
/// [`predict_series`].
pub fn dynamic_graphs(model: &StamModel, series: &TrafficWindow, graph: &StaticGraph, seed: u64) -> Result<Vec<Array>> {
    let (t, n) = (series.n_steps(), series.n_nodes());
    let window = model.shape.t_max.min(t);
    let mut layers: Vec<Vec<f64>> = Vec::new();
    for (start, skip) in tile_windows(t, window) {
        let w = series.slice(start, window)?;
        let mut tape = Tape::new();
        let opts = ForwardOptions {
            sampling: ModelSampling::Seed(seed.wrapping_add(start as u64)),
            want_graphs: true,
            dropout_seed: None,
        };
        let out = model.forward(&mut tape, &w, graph, opts)?;
        let adj: Vec<&Array> = out
            .spatial
            .iter()
            .flatten()
            .filter_map(|s| s.adjacency.map(|a| tape.value(a)))
            .collect();
        if layers.is_empty() {
            layers = vec![vec![0.0; t * n * n]; adj.len()];
        }
        for (dst, a) in layers.iter_mut().zip(adj) {
            let from = (start + skip) * n * n;
            dst[from..(start + window) * n * n].copy_from_slice(&a.data()[skip * n * n..]);
        }
    }
    layers
        .into_iter()
        .map(|d| Ok(Array::new(vec![t, n, n], d)?))
        .collect()
}

/// Average of `T×N×N` adjacencies over layers and steps. Rows of a mean of
/// row-stochastic matrices stay stochastic.
pub fn mean_graph(graphs: &[Array]) -> Result<Array> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Invalid("no dynamic graphs to average (identity spatial experts?)".into()))?;
    let n = first.shape()[1];
    let mut acc = vec![0.0; n * n];
    let mut count = 0usize;
    for g in graphs {
        for step in g.data().chunks(n * n) {
            acc.iter_mut().zip(step).for_each(|(a, v)| *a += v);
            count += 1;
        }
    }
    Ok(Array::new(vec![n, n], acc.into_iter().map(|v| v / count as f64).collect())?)
}

/// Imputes a series given in original units: observed cells are kept,
/// hidden cells are predicted. Returns `T×N`.
pub fn impute(
    model: &StamModel,
    series: &TrafficWindow,
    graph: &StaticGraph,
    stats: &NormStats,
    seed: u64,
) -> Result<Array> {
    let normed = apply_stats(series, stats)?;
    let y = predict_series(model, &normed, graph, seed)?;
    merge_with_observed(&y, series, stats)
}

/// Normalizes `series` with previously fitted statistics.
pub fn apply_stats(series: &TrafficWindow, stats: &NormStats) -> Result<TrafficWindow> {
    let n = series.n_nodes();
    if stats.mean.len() != n {
        return Err(Error::Invalid(format!(
            "statistics cover {} nodes, data has {n}",
            stats.mean.len()
        )));
    }
    let mut out = series.clone();
    for (i, v) in out.values.data_mut().iter_mut().enumerate() {
        *v = if series.mask.data()[i] == 1.0 {
            (*v - stats.mean[i % n]) / stats.std[i % n]
        } else {
            0.0
        };
    }
    Ok(out)
}

/// MAE/RMSE of `imputed` against `truth` over `eval_mask`, all `T×N`.
pub fn score(imputed: &Array, truth: &Array, eval_mask: &Array) -> Result<Metrics> {
    metrics(imputed, truth, eval_mask)
}

/// Imputes `series` and scores it on `eval_mask` against `truth` (`T×N`).
pub fn evaluate(
    model: &StamModel,
    series: &TrafficWindow,
    truth: &Array,
    eval_mask: &Array,
    graph: &StaticGraph,
    stats: &NormStats,
    seed: u64,
) -> Result<Metrics> {
    let imputed = impute(model, series, graph, stats, seed)?;
    score(&imputed, truth, eval_mask)
}

/// Builds a model sized for `series` and `graph`.
pub fn build_model(
    config: &MoeConfig,
    wavelet: WaveletConfig,
    train: &TrainConfig,
    series: &TrafficWindow,
    graph: &StaticGraph,
) -> Result<StamModel> {
    let shape = ModelShape {
        n_nodes: series.n_nodes(),
        e_per_node: graph.e_per_node,
        t_max: train.window,
    };
    StamModel::new(config.clone(), wavelet, shape, train.seed)
}

/// Fits `model` on the observed cells of `series` (original units).
/// Returns the normalization statistics and the training report; the model
/// ends with the parameters of its best validation epoch.
pub fn train(
    model: &mut StamModel,
    series: &TrafficWindow,
    graph: &StaticGraph,
    cfg: &TrainConfig,
) -> Result<(NormStats, TrainReport)> {
    cfg.validate(series.n_steps())?;
    if cfg.window > model.shape.t_max {
        return Err(Error::Invalid(format!(
            "window {} exceeds the model's {}",
            cfg.window, model.shape.t_max
        )));
    }
    let (normed, stats) = normalize(series);
    let train_len = cfg.train_len(series.n_steps());
    let t = cfg.window;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // fixed whitening of the validation span
    let val = if train_len < series.n_steps() {
        let span = normed.slice(train_len, series.n_steps() - train_len)?;
        let (input, hidden) = apply_missing(&span, &MissingSpec { kind: cfg.whiten, seed: rng.random() })?;
        (hidden.sum() > 0.0).then_some((input, span, hidden))
    } else {
        None
    };

    let mut adam = Adam::new(cfg.optimizer, &model.store);
    let windows_per_epoch = (train_len / t).max(1);
    let steps_per_epoch = windows_per_epoch.div_ceil(cfg.batch_size);
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, model.store.clone());
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        for step in 0..steps_per_epoch {
            model.store.zero_grad();
            let mut losses = Vec::with_capacity(cfg.batch_size);
            let batch = cfg.batch_size.min(windows_per_epoch - step * cfg.batch_size);
            for _ in 0..batch {
                let start = rng.random_range(0..=train_len - t);
                let spec = MissingSpec {
                    kind: cfg.whiten,
                    seed: rng.random(),
                };
                let (sample_seed, drop_seed): (u64, u64) = (rng.random(), rng.random());
                let w = normed.slice(start, t)?;
                let (input, hidden) = apply_missing(&w, &spec)?;
                if hidden.sum() == 0.0 {
                    continue;
                }
                let mut tape = Tape::new();
                let opts = ForwardOptions {
                    sampling: ModelSampling::Seed(sample_seed),
                    want_graphs: false,
                    dropout_seed: Some(drop_seed),
                };
                let out = model.forward(&mut tape, &input, graph, opts)?;
                let loss = masked_mae_var(&mut tape, out.y, &w.values_2d(), &hidden)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, step {step} (window start {start})"
                    )));
                }
                losses.push(value);
                tape.backward(loss, &mut model.store)?;
            }
            if losses.is_empty() {
                continue;
            }
            let k = losses.len() as f64;
            for p in model.store.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g /= k);
            }
            adam.step(&mut model.store).map_err(|e| match e {
                NumError::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, step {step}")),
                other => other.into(),
            })?;
            report.loss_history.push(losses.iter().sum::<f64>() / k);
        }
        report.epochs_run = epoch + 1;

        let score = match &val {
            Some((input, span, hidden)) => {
                let y = predict_series(model, input, graph, cfg.eval_seed)?;
                masked_mae(&y.into_shape(hidden.shape())?, &span.values_2d(), hidden)?
            }
            None => report.loss_history.last().copied().unwrap_or(f64::INFINITY),
        };
        report.val_history.push(score);
        if score < best.0 {
            best = (score, model.store.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if best.0.is_finite() {
        model.store = best.1;
    }
    Ok((stats, report))
}

/// Dimensions of the model used by [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradCheckDims {
    pub nodes: usize,
    pub steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_in: usize,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        Self {
            nodes: 8,
            steps: 6,
            layers: 1,
            heads: 2,
            d_in: 8,
        }
    }
}

/// Builds a tiny model on synthetic data and compares analytic gradients of
/// the whitened masked MAE with central differences, sampling frozen.
pub fn grad_check(
    dims: GradCheckDims,
    eps: f64,
    seed: u64,
    tamper: Option<&dyn Fn(&mut crate::numcore::ParamStore)>,
) -> Result<GradCheckReport> {
    if dims.nodes > 8 || dims.steps > 6 || dims.d_in > 8 {
        return Err(Error::Invalid(format!("gradient checks run on N ≤ 8, T ≤ 6, D ≤ 8; got {dims:?}")));
    }
    let synth = crate::datakit::SynthParams {
        e_per_node: 3.min(dims.nodes - 1),
        ..Default::default()
    };
    let (series, graph, _) = crate::datakit::generate_synthetic(dims.nodes, dims.steps, seed, &synth)?;
    let (normed, _) = normalize(&series);
    let (input, hidden) = apply_missing(&normed, &MissingSpec { kind: MissingKind::point(0.4), seed })?;
    let config = MoeConfig {
        layers: dims.layers,
        heads: dims.heads,
        d_in: dims.d_in,
        d_pe: (dims.d_in / 4).max(1),
        ffn_hidden: dims.d_in,
        readout_hidden: dims.d_in,
        ..MoeConfig::default()
    };
    let shape = ModelShape {
        n_nodes: dims.nodes,
        e_per_node: graph.e_per_node,
        t_max: dims.steps,
    };
    let mut model = StamModel::new(config, WaveletConfig::default(), shape, seed)?;
    let mut tape = Tape::new();
    let samples = model.forward(&mut tape, &input, &graph, ForwardOptions::eval(seed))?.samples;
    let target = normed.values_2d();
    let frozen = model.clone();
    let report = check_parameter_gradients(
        &mut model.store,
        eps,
        |store, tape| {
            let opts = ForwardOptions {
                sampling: ModelSampling::Replay(&samples),
                want_graphs: false,
                dropout_seed: None,
            };
            let out = frozen
                .forward_with(tape, store, &input, &graph, opts)
                .map_err(|e| NumError::Shape(e.to_string()))?;
            masked_mae_var(tape, out.y, &target, &hidden).map_err(|e| NumError::Shape(e.to_string()))
        },
        tamper,
    )?;
    Ok(report)
}
