//! The mixture of experts: `L` stacked temporal/spatial pairs, an
//! observation expert that gates their outputs per cell, and a readout.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::{NormStats, StaticGraph, TrafficWindow};
use crate::layers::{Dropout, LinearParams};
use crate::lrsgat::{spatial_expert_forward, LrsgatParams, SampleSet, Sampling, SpatialOptions, SpatialTrace};
use crate::numcore::{Array, ParamId, ParamStore, Tape, Var};
use crate::temporal::{msat_forward, MsatParams};
use crate::wavefeat::{embed, EmbedParams, EmbeddedBatch, WaveletConfig, D_OE};
use crate::{Error, Result};

/// Bumped whenever the checkpoint layout or parameter naming changes.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialKind {
    #[default]
    Lrsgat,
    /// Passes the temporal output through unchanged (ablation).
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoeConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_in: usize,
    pub d_pe: usize,
    pub ffn_hidden: usize,
    pub readout_hidden: usize,
    /// Feed `γ·Ã·v` from the dynamic graph into the spatial output.
    pub graph_fusion: bool,
    pub spatial: SpatialKind,
    /// Append the observation-expert input to the readout features.
    pub readout_with_observation: bool,
    pub attention_dropout: f64,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_in: 64,
            d_pe: 16,
            ffn_hidden: 128,
            readout_hidden: 128,
            graph_fusion: true,
            spatial: SpatialKind::Lrsgat,
            readout_with_observation: false,
            attention_dropout: 0.0,
        }
    }
}

impl MoeConfig {
    pub fn n_experts(&self) -> usize {
        2 * self.layers
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.layers == 0 || self.heads == 0 || self.ffn_hidden == 0 || self.readout_hidden == 0 {
            return bad("layers, heads and hidden widths must be positive".into());
        }
        if self.d_in % self.heads != 0 {
            return bad(format!("d_in {} is not divisible by {} heads", self.d_in, self.heads));
        }
        if self.d_pe == 0 || self.d_pe >= self.d_in {
            return bad(format!("d_pe must lie in 1..d_in, got {}", self.d_pe));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return bad(format!("attention_dropout must lie in [0, 1), got {}", self.attention_dropout));
        }
        Ok(())
    }
}

/// Fixed sizes a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_nodes: usize,
    pub e_per_node: usize,
    /// Longest window the positional table covers.
    pub t_max: usize,
}

#[derive(Clone, Debug)]
pub struct StamModel {
    pub config: MoeConfig,
    pub wavelet: WaveletConfig,
    pub shape: ModelShape,
    pub store: ParamStore,
    embed: EmbedParams,
    temporal: Vec<MsatParams>,
    spatial: Vec<Option<LrsgatParams>>,
    gate: ParamId,
    readout_hidden: LinearParams,
    readout_out: LinearParams,
}

/// Per-layer sampling source.
#[derive(Clone, Copy, Debug)]
pub enum ModelSampling<'a> {
    Seed(u64),
    /// `[layer][step]` sets recorded by an earlier pass.
    Replay(&'a [Vec<SampleSet>]),
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a> {
    pub sampling: ModelSampling<'a>,
    pub want_graphs: bool,
    /// Seed for attention dropout; `None` disables it (evaluation).
    pub dropout_seed: Option<u64>,
}

impl ForwardOptions<'_> {
    pub fn eval(seed: u64) -> Self {
        Self {
            sampling: ModelSampling::Seed(seed),
            want_graphs: false,
            dropout_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `T×N×1`, normalized units.
    pub y: Var,
    /// `T×N×2L`
    pub gates: Var,
    /// Ungated expert outputs in order `t_0, s_0, t_1, s_1, …`.
    pub experts: Vec<Var>,
    pub readout_input: Var,
    pub batch: EmbeddedBatch,
    /// `[layer][step]`; empty for identity layers.
    pub samples: Vec<Vec<SampleSet>>,
    pub spatial: Vec<Option<SpatialTrace>>,
    pub temporal_attention: Vec<Var>,
}

impl StamModel {
    pub fn new(config: MoeConfig, wavelet: WaveletConfig, shape: ModelShape, seed: u64) -> Result<Self> {
        config.validate()?;
        wavelet.validate()?;
        if shape.n_nodes < 4 || shape.e_per_node == 0 || shape.e_per_node >= shape.n_nodes || shape.t_max == 0 {
            return Err(Error::Invalid(format!("unusable model shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_in;
        let embed = EmbedParams::register(&mut store, d, config.d_pe, shape.t_max, shape.n_nodes, &mut rng)?;
        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        for l in 0..config.layers {
            temporal.push(MsatParams::register(
                &mut store,
                &format!("layer{l}.temporal"),
                d,
                config.heads,
                config.ffn_hidden,
                &mut rng,
            )?);
            spatial.push(match config.spatial {
                SpatialKind::Lrsgat => Some(LrsgatParams::register(
                    &mut store,
                    &format!("layer{l}.spatial"),
                    d,
                    shape.n_nodes,
                    shape.e_per_node,
                    config.ffn_hidden,
                    config.graph_fusion,
                    &mut rng,
                )?),
                SpatialKind::Identity => None,
            });
        }
        let gate = store.add_weight("gate", D_OE, config.n_experts(), &mut rng)?;
        let mut width = config.n_experts() * d;
        if config.readout_with_observation {
            width += D_OE;
        }
        let readout_hidden = LinearParams::register(&mut store, "readout.hidden", width, config.readout_hidden, true, &mut rng)?;
        let readout_out = LinearParams::register(&mut store, "readout.out", config.readout_hidden, 1, true, &mut rng)?;
        Ok(Self {
            config,
            wavelet,
            shape,
            store,
            embed,
            temporal,
            spatial,
            gate,
            readout_hidden,
            readout_out,
        })
    }

    pub fn gate_param(&self) -> ParamId {
        self.gate
    }

    /// `window` must be normalized; hidden cells are zero-filled here.
    pub fn forward(
        &self,
        tape: &mut Tape,
        window: &TrafficWindow,
        graph: &StaticGraph,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.store, window, graph, opts)
    }

    /// Like [`forward`](Self::forward) but reads parameters from `store`,
    /// which must share this model's layout.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        window: &TrafficWindow,
        graph: &StaticGraph,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        if graph.n_nodes != self.shape.n_nodes || graph.e_per_node != self.shape.e_per_node {
            return Err(Error::Invalid(format!(
                "graph is {}×{}, model expects {}×{}",
                graph.n_nodes, graph.e_per_node, self.shape.n_nodes, self.shape.e_per_node
            )));
        }
        let mut input = window.clone();
        for (v, m) in input.values.data_mut().iter_mut().zip(window.mask.data()) {
            if *m == 0.0 {
                *v = 0.0;
            }
        }
        let batch = embed(tape, store, &self.embed, &input, &self.wavelet)?;
        let mut rng = match opts.sampling {
            ModelSampling::Seed(s) => Some(ChaCha8Rng::seed_from_u64(s)),
            ModelSampling::Replay(sets) => {
                if sets.len() != self.config.layers {
                    return Err(Error::Invalid(format!(
                        "replay holds {} layers, model has {}",
                        sets.len(),
                        self.config.layers
                    )));
                }
                None
            }
        };
        let mut dropout = opts
            .dropout_seed
            .filter(|_| self.config.attention_dropout > 0.0)
            .map(|s| Dropout::new(self.config.attention_dropout, s));

        let (mut x_t, mut x_s) = (batch.x_in, batch.x_in);
        let mut experts = Vec::with_capacity(self.config.n_experts());
        let mut samples = Vec::new();
        let mut traces = Vec::new();
        let mut temporal_attention = Vec::new();
        for l in 0..self.config.layers {
            let t_out = msat_forward(
                tape,
                store,
                &self.temporal[l],
                x_t,
                dropout.as_mut(),
                Some(&mut temporal_attention),
            )?;
            let s_out = match &self.spatial[l] {
                Some(p) => {
                    let sampling = match (&mut rng, opts.sampling) {
                        (Some(r), _) => Sampling::Draw(r),
                        (None, ModelSampling::Replay(sets)) => Sampling::Replay(&sets[l]),
                        (None, ModelSampling::Seed(_)) => unreachable!(),
                    };
                    let so = SpatialOptions {
                        sampling,
                        want_graph: opts.want_graphs,
                    };
                    let (y, tr) = spatial_expert_forward(tape, store, p, x_s, t_out, graph, so)?;
                    samples.push(tr.samples.clone());
                    traces.push(Some(tr));
                    y
                }
                None => {
                    samples.push(Vec::new());
                    traces.push(None);
                    t_out
                }
            };
            experts.push(t_out);
            experts.push(s_out);
            x_t = t_out;
            x_s = s_out;
        }

        let w_oe = tape.param(store, self.gate);
        let gates = gate_scores(tape, batch.x_oe, w_oe)?;
        let extra = self.config.readout_with_observation.then_some(batch.x_oe);
        let readout_input = gated_concat(tape, gates, &experts, extra)?;
        let h = self.readout_hidden.forward(tape, store, readout_input)?;
        let h = tape.relu(h);
        let y = self.readout_out.forward(tape, store, h)?;
        Ok(ForwardOutput {
            y,
            gates,
            experts,
            readout_input,
            batch,
            samples,
            spatial: traces,
            temporal_attention,
        })
    }

    /// Readout applied to externally supplied gates and expert outputs.
    pub fn readout_from_experts(&self, tape: &mut Tape, gates: Var, experts: &[Var]) -> Result<Var> {
        if self.config.readout_with_observation {
            return Err(Error::Invalid("readout needs the observation input in this configuration".into()));
        }
        let input = gated_concat(tape, gates, experts, None)?;
        let h = self.readout_hidden.forward(tape, &self.store, input)?;
        let h = tape.relu(h);
        Ok(self.readout_out.forward(tape, &self.store, h)?)
    }

    /// Predictions for a normalized window as a plain `T×N×1` array.
    pub fn predict(&self, window: &TrafficWindow, graph: &StaticGraph, seed: u64) -> Result<Array> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, window, graph, ForwardOptions::eval(seed))?;
        Ok(tape.value(out.y).clone())
    }
}

/// `softmax(x_oe · W_oe)` per cell: `T×N×3 → T×N×2L`.
pub fn gate_scores(tape: &mut Tape, x_oe: Var, w_oe: Var) -> Result<Var> {
    let logits = tape.linear(x_oe, w_oe, None)?;
    Ok(tape.softmax_last(logits)?)
}

/// Scales expert `k` by gate channel `k` and concatenates along features.
fn gated_concat(tape: &mut Tape, gates: Var, experts: &[Var], extra: Option<Var>) -> Result<Var> {
    let gs = tape.shape(gates).to_vec();
    if gs.len() != 3 || gs[2] != experts.len() {
        return Err(Error::Invalid(format!("{} experts with gates {gs:?}", experts.len())));
    }
    let mut parts = Vec::with_capacity(experts.len() + 1);
    for (k, &e) in experts.iter().enumerate() {
        let g = tape.slice(gates, 2, k, 1)?;
        parts.push(tape.scale_rows(e, g)?);
    }
    parts.extend(extra);
    Ok(tape.concat(&parts, 2)?)
}

/// Observed cells keep their recorded values; hidden ones take the
/// denormalized prediction. Returns `T×N`.
pub fn merge_with_observed(y_hat: &Array, window: &TrafficWindow, stats: &NormStats) -> Result<Array> {
    let (t, n) = (window.n_steps(), window.n_nodes());
    if y_hat.len() != t * n || stats.mean.len() != n {
        return Err(Error::Invalid(format!(
            "prediction {:?} does not match a {t}×{n} window",
            y_hat.shape()
        )));
    }
    let pred = crate::datakit::denormalize(y_hat, stats);
    let data = (0..t * n)
        .map(|i| {
            if window.mask.data()[i] == 1.0 {
                window.values.data()[i]
            } else {
                pred.data()[i]
            }
        })
        .collect();
    Ok(Array::new(vec![t, n], data)?)
}

// ── checkpoints ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub model: MoeConfig,
    pub wavelet: WaveletConfig,
    pub shape: ModelShape,
    /// Normalization fitted on the training series.
    pub norm: NormStats,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &StamModel, norm: &NormStats, config_hash: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(model.store.len());
    for p in model.store.iter() {
        let file = format!("{}.f64", p.name);
        let bytes: Vec<u8> = p.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        wavelet: model.wavelet,
        shape: model.shape,
        norm: norm.clone(),
        config_hash: config_hash.to_string(),
        params,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(StamModel, Manifest)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    let mut model = StamModel::new(manifest.model.clone(), manifest.wavelet, manifest.shape, 0)?;
    if manifest.params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint lists {} parameters, model has {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    for entry in &manifest.params {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        let param = model.store.get_mut(id);
        if param.value.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                param.value.shape()
            )));
        }
        if entry.file.contains(['/', '\\']) {
            return Err(Error::Checkpoint(format!("bad parameter file name `{}`", entry.file)));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        if bytes.len() != 8 * param.value.len() {
            return Err(Error::Checkpoint(format!("`{}` holds {} bytes", entry.file, bytes.len())));
        }
        for (dst, chunk) in param.value.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{generate_synthetic, normalize, SynthParams};
    use crate::numcore::check_parameter_gradients;
    use rand::Rng;

    fn tiny_config(layers: usize) -> MoeConfig {
        MoeConfig {
            layers,
            heads: 2,
            d_in: 8,
            d_pe: 2,
            ffn_hidden: 8,
            readout_hidden: 6,
            ..MoeConfig::default()
        }
    }

    fn tiny(layers: usize, n: usize, t: usize) -> (StamModel, TrafficWindow, StaticGraph, NormStats) {
        let params = SynthParams {
            e_per_node: 3,
            ..SynthParams::default()
        };
        let (w, g, _) = generate_synthetic(n, t, 5, &params).unwrap();
        let (mut w, stats) = normalize(&w);
        // a few hidden cells
        for i in (0..w.mask.len()).step_by(5) {
            w.mask.data_mut()[i] = 0.0;
        }
        let shape = ModelShape {
            n_nodes: n,
            e_per_node: 3,
            t_max: t,
        };
        let model = StamModel::new(tiny_config(layers), WaveletConfig::default(), shape, 1).unwrap();
        (model, w, g, stats)
    }

    #[test]
    fn gate_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Array::from_fn(&[2, 3, 3], |i| i as f64 * 0.3 - 1.0));
        let zero = tape.constant(Array::zeros(&[3, 4]));
        let g = gate_scores(&mut tape, x, zero).unwrap();
        assert!(tape.value(g).data().iter().all(|&v| v == 0.25));

        let x1 = tape.constant(Array::new(vec![1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let w = tape.constant(Array::new(vec![3, 2], vec![3f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let g = gate_scores(&mut tape, x1, w).unwrap();
        let v = tape.value(g).data();
        assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn forward_shapes() {
        for layers in [1, 2, 3] {
            let (m, w, g, _) = tiny(layers, 6, 5);
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &w, &g, ForwardOptions::eval(0)).unwrap();
            assert_eq!(tape.shape(out.y), &[5, 6, 1]);
            assert_eq!(out.experts.len(), 2 * layers);
            assert_eq!(tape.shape(out.readout_input), &[5, 6, 2 * layers * 8]);
            assert_eq!(tape.shape(out.gates), &[5, 6, 2 * layers]);
            for row in tape.value(out.gates).data().chunks(2 * layers) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn one_hot_gate_isolates_an_expert() {
        let (m, w, g, _) = tiny(2, 6, 4);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &w, &g, ForwardOptions::eval(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..4 {
            let one_hot = tape.constant(Array::from_fn(&[4, 6, 4], |i| if i % 4 == k { 1.0 } else { 0.0 }));
            let base = m.readout_from_experts(&mut tape, one_hot, &out.experts).unwrap();
            let mut perturbed = out.experts.clone();
            for (j, e) in perturbed.iter_mut().enumerate() {
                if j != k {
                    let noise = Array::from_fn(&[4, 6, 8], |_| rng.random_range(-5.0..5.0));
                    let nv = tape.constant(noise);
                    *e = tape.add(*e, nv).unwrap();
                }
            }
            let other = m.readout_from_experts(&mut tape, one_hot, &perturbed).unwrap();
            assert_eq!(tape.value(base), tape.value(other));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (m, w, g, _) = tiny(2, 10, 6);
        let a = m.predict(&w, &g, 4).unwrap();
        assert_eq!(a, m.predict(&w, &g, 4).unwrap());
        assert_ne!(a, m.predict(&w, &g, 5).unwrap());
    }

    #[test]
    fn all_missing_node_keeps_gates_finite() {
        let (m, mut w, g, _) = tiny(1, 6, 6);
        for t in 0..6 {
            w.mask.set(&[t, 2], 0.0);
        }
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &w, &g, ForwardOptions::eval(0)).unwrap();
        assert!(tape.value(out.gates).is_finite());
        assert!(tape.value(out.y).is_finite());
    }

    #[test]
    fn end_to_end_gradient_check() {
        let (mut m, w, g, _) = tiny(1, 6, 4);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &w, &g, ForwardOptions::eval(0)).unwrap();
        let samples = out.samples;
        let target = Array::from_fn(&[4, 6, 1], |i| (i as f64 * 0.37).sin());
        let model = m.clone();
        let report = check_parameter_gradients(
            &mut m.store,
            1e-5,
            |st, tape| {
                let opts = ForwardOptions {
                    sampling: ModelSampling::Replay(&samples),
                    want_graphs: false,
                    dropout_seed: None,
                };
                let out = model
                    .forward_with(tape, st, &w, &g, opts)
                    .map_err(|e| crate::NumError::Shape(e.to_string()))?;
                let c = tape.constant(target.clone());
                let d = tape.sub(out.y, c)?;
                let sq = tape.mul(d, d)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 1.0 / 24.0))
            },
            None,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn merge_cases() {
        let (_, w, _, stats) = tiny(1, 5, 6);
        let y = Array::from_fn(&[6, 5, 1], |i| i as f64 * 0.1);
        let mut full = w.clone();
        full.mask.data_mut().fill(1.0);
        assert_eq!(merge_with_observed(&y, &full, &stats).unwrap(), full.values_2d());
        let mut empty = w.clone();
        empty.mask.data_mut().fill(0.0);
        let den = crate::datakit::denormalize(&y, &stats).into_shape(&[6, 5]).unwrap();
        assert_eq!(merge_with_observed(&y, &empty, &stats).unwrap(), den);
        let mixed = merge_with_observed(&y, &w, &stats).unwrap();
        for t in 0..6 {
            for n in 0..5 {
                let want = if w.observed(t, n) {
                    w.value(t, n)
                } else {
                    y.get(&[t, n, 0]) * stats.std[n] + stats.mean[n]
                };
                assert_eq!(mixed.get(&[t, n]), want);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, w, g, stats) = tiny(2, 6, 5);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, &stats, "abc", dir.path()).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.config_hash, "abc");
        assert_eq!(manifest.norm, stats);
        for (a, b) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(m.predict(&w, &g, 1).unwrap(), back.predict(&w, &g, 1).unwrap());
    }

    #[test]
    fn checkpoint_rejects_mismatches() {
        let (m, _, _, stats) = tiny(1, 6, 5);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, &stats, "", dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

        fs::write(&path, &text).unwrap();
        fs::write(dir.path().join("gate.f64"), [0u8; 8]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

        assert!(load_checkpoint(&dir.path().join("absent")).unwrap_err().is_user_error());
    }

    #[test]
    fn config_validation() {
        assert!(MoeConfig { heads: 3, ..MoeConfig::default() }.validate().is_err());
        assert!(MoeConfig { d_pe: 64, ..MoeConfig::default() }.validate().is_err());
        assert!(MoeConfig::default().validate().is_ok());
        let bad: std::result::Result<MoeConfig, _> = serde_json::from_str(r#"{"layer": 2}"#);
        assert!(bad.is_err());
    }
}
