//! Spatial expert: local attention over the K-NN graph, significance-scored
//! node sampling, a low-rank projection message, global re-attention and a
//! semi-adaptive dynamic graph.
//!
//! Every step of the window is processed at once; tensors carry a leading
//! `T` axis and sampling is done independently per step.

mod sampling;

use rand::Rng;

pub use sampling::{sample_nodes, sample_size, SampleSet};

use crate::datakit::StaticGraph;
use crate::layers::{FeedForward, LayerNormParams, LinearParams};
use crate::numcore::{glorot_uniform, ops, Array, ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LrsgatParams {
    /// `2·D → D`, applied to `⟨x_sin ∥ x_tout⟩`.
    pub fusion: LinearParams,
    pub norm_attn: LayerNormParams,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    /// `E × 1`
    pub scorer: ParamId,
    pub re_query: LinearParams,
    pub re_key: LinearParams,
    pub re_value: LinearParams,
    pub re_out: LinearParams,
    pub norm_ffn: LayerNormParams,
    pub ffn: FeedForward,
    /// `N × D`
    pub refraction: ParamId,
    /// Weight of the dynamic-graph aggregation; `None` disables it.
    pub graph_weight: Option<ParamId>,
    pub d_model: usize,
    pub n_nodes: usize,
    pub e_per_node: usize,
}

impl LrsgatParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_nodes: usize,
        e_per_node: usize,
        ffn_hidden: usize,
        graph_fusion: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = d_model;
        let lin = |store: &mut ParamStore, part: &str, d_in, bias, rng: &mut _| {
            LinearParams::register(store, &format!("{name}.{part}"), d_in, d, bias, rng)
        };
        // key projections carry no bias: it would shift whole score rows
        Ok(Self {
            fusion: lin(store, "fusion", 2 * d, true, rng)?,
            norm_attn: LayerNormParams::register(store, &format!("{name}.norm_attn"), d)?,
            query: lin(store, "query", d, true, rng)?,
            key: lin(store, "key", d, false, rng)?,
            value: lin(store, "value", d, true, rng)?,
            scorer: store.add_weight(format!("{name}.scorer"), e_per_node, 1, rng)?,
            re_query: lin(store, "re_query", d, true, rng)?,
            re_key: lin(store, "re_key", d, false, rng)?,
            re_value: lin(store, "re_value", d, true, rng)?,
            re_out: lin(store, "re_out", d, false, rng)?,
            norm_ffn: LayerNormParams::register(store, &format!("{name}.norm_ffn"), d)?,
            ffn: FeedForward::register(store, &format!("{name}.ffn"), d, ffn_hidden, rng)?,
            refraction: store.add(format!("{name}.refraction"), glorot_uniform(&[n_nodes, d], n_nodes, d, rng))?,
            graph_weight: if graph_fusion {
                Some(store.add(format!("{name}.graph_weight"), Array::scalar(0.1))?)
            } else {
                None
            },
            d_model,
            n_nodes,
            e_per_node,
        })
    }
}

/// Where the per-step sample sets come from.
pub enum Sampling<'a, R: Rng> {
    Draw(&'a mut R),
    /// Reuse sets from an earlier pass, one per step; this freezes the
    /// selection when checking gradients.
    Replay(&'a [SampleSet]),
}

/// Everything the spatial expert records besides its output.
#[derive(Clone, Debug, Default)]
pub struct SpatialTrace {
    pub samples: Vec<SampleSet>,
    /// Softmax outputs keyed by role: `local` `[T,N,E]`, `message` `[T,2S,N]`,
    /// `reattention` `[T,N,2S]`, `sampled` `[T,N,2S]`.
    pub attention: Vec<(&'static str, Var)>,
    /// `[T,N,N]`, present when the graph was built.
    pub adjacency: Option<Var>,
    /// Matmul FLOPs of the whole expert, including the dynamic graph.
    pub flops: u64,
    /// The share of `flops` spent building the dynamic graph.
    pub graph_flops: u64,
}

impl SpatialTrace {
    pub fn path_flops(&self) -> u64 {
        self.flops - self.graph_flops
    }
}

fn scale_dk(tape: &mut Tape, scores: Var, d: usize) -> Var {
    tape.scale(scores, 1.0 / (d as f64).sqrt())
}

/// `e_g[t, i] = softmax_j∈nb(i) (q_i · k_j / √d)`, shape `[T,N,E]`.
pub fn local_graph_attention(tape: &mut Tape, q: Var, k: Var, graph: &StaticGraph) -> Result<Var> {
    let s = tape.shape(q).to_vec();
    let (t, n, d) = (s[0], s[1], s[2]);
    if n != graph.n_nodes {
        return Err(Error::Invalid(format!("graph has {} nodes, features have {n}", graph.n_nodes)));
    }
    let e = graph.e_per_node;
    let kn = tape.gather(k, &graph.flat_neighbors(), 1)?;
    let kn = tape.reshape(kn, &[t * n, e, d])?;
    let q1 = tape.reshape(q, &[t * n, 1, d])?;
    let scores = tape.bmm_nt(q1, kn)?;
    let scores = scale_dk(tape, scores, d);
    let att = tape.softmax_last(scores)?;
    Ok(tape.reshape(att, &[t, n, e])?)
}

/// `e_w = e_g · W^sc`, shape `[T,N]`.
pub fn significance_scores(tape: &mut Tape, e_g: Var, w_sc: Var) -> Result<Var> {
    let s = tape.shape(e_g).to_vec();
    let e_w = tape.linear(e_g, w_sc, None)?;
    Ok(tape.reshape(e_w, &[s[0], s[1]])?)
}

/// Sampled queries and keys `[T,2S,D]`, the projection message `[T,2S,D]`
/// and its attention `[T,2S,N]`.
pub struct ProjectionPack {
    pub p_s: Var,
    pub k_s: Var,
    pub message: Var,
    pub attention: Var,
}

pub fn project_message(tape: &mut Tape, q: Var, k: Var, v: Var, samples: &[SampleSet]) -> Result<ProjectionPack> {
    let d = tape.shape(q)[2];
    let width = samples.first().map_or(0, SampleSet::len);
    let flat: Vec<usize> = samples.iter().flat_map(SampleSet::all).collect();
    let p_s = tape.gather_batched(q, &flat, width)?;
    let k_s = tape.gather_batched(k, &flat, width)?;
    let scores = tape.bmm_nt(p_s, k)?;
    let scores = scale_dk(tape, scores, d);
    let attention = tape.softmax_last(scores)?;
    let message = tape.bmm(attention, v)?;
    Ok(ProjectionPack {
        p_s,
        k_s,
        message,
        attention,
    })
}

/// Semi-adaptive adjacency: `A^S = softmax(q k_sᵀ/√d)`,
/// `E^adp = toph(m E^refᵀ)`, `Ã = softmax(ReLU(A^S E^adp))`.
/// Returns `(A^S [T,N,2S], Ã [T,N,N])`.
pub fn dgsl(tape: &mut Tape, q: Var, k_s: Var, message: Var, refraction: Var) -> Result<(Var, Var)> {
    let d = tape.shape(q)[2];
    let scores = tape.bmm_nt(q, k_s)?;
    let scores = scale_dk(tape, scores, d);
    let a_s = tape.softmax_last(scores)?;
    let ref_t = tape.permute(refraction, &[1, 0])?;
    let e_adp = tape.linear(message, ref_t, None)?;
    let e_adp = tape.top_half(e_adp);
    let mixed = tape.bmm(a_s, e_adp)?;
    let mixed = tape.relu(mixed);
    let adj = tape.softmax_last(mixed)?;
    Ok((a_s, adj))
}

/// Fully learned `softmax(ReLU(E₁ E₂ᵀ))`, kept as a reference point for the
/// sampled construction.
pub fn adaptive_adjacency(e1: &Array, e2: &Array) -> Result<Array> {
    let e2t = ops::permute(e2, &[1, 0])?;
    let prod = ops::matmul(e1, &e2t)?;
    Ok(ops::softmax(&ops::relu(&prod), 1)?)
}

pub struct SpatialOptions<'a, R: Rng> {
    pub sampling: Sampling<'a, R>,
    /// Build `Ã` even when it does not feed the output.
    pub want_graph: bool,
}

/// `x_sin, x_tout: [T,N,D] → [T,N,D]`.
pub fn spatial_expert_forward<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LrsgatParams,
    x_sin: Var,
    x_tout: Var,
    graph: &StaticGraph,
    opts: SpatialOptions<'_, R>,
) -> Result<(Var, SpatialTrace)> {
    let s = tape.shape(x_sin).to_vec();
    if s.len() != 3 || s[2] != p.d_model || s[1] != p.n_nodes || tape.shape(x_tout) != s.as_slice() {
        return Err(Error::Invalid(format!(
            "spatial expert expects two T×{}×{} inputs, got {s:?} and {:?}",
            p.n_nodes,
            p.d_model,
            tape.shape(x_tout)
        )));
    }
    if graph.e_per_node != p.e_per_node {
        return Err(Error::Invalid(format!(
            "graph has {} neighbours per node, expert expects {}",
            graph.e_per_node, p.e_per_node
        )));
    }
    let (t, n, d) = (s[0], s[1], s[2]);
    let flops_start = tape.flops();
    let mut trace = SpatialTrace::default();

    let fused = tape.concat(&[x_sin, x_tout], 2)?;
    let x = p.fusion.forward(tape, store, fused)?;
    let h = p.norm_attn.forward(tape, store, x)?;
    let q = p.query.forward(tape, store, h)?;
    let k = p.key.forward(tape, store, h)?;
    let v = p.value.forward(tape, store, h)?;

    let e_g = local_graph_attention(tape, q, k, graph)?;
    trace.attention.push(("local", e_g));
    let w_sc = tape.param(store, p.scorer);
    let e_w = significance_scores(tape, e_g, w_sc)?;

    trace.samples = match opts.sampling {
        Sampling::Draw(rng) => {
            let scores = tape.value(e_w).data().to_vec();
            scores
                .chunks(n)
                .map(|row| sample_nodes(row, rng))
                .collect::<Result<_>>()?
        }
        Sampling::Replay(sets) => {
            let width = 2 * sample_size(n);
            if sets.len() != t || sets.iter().any(|s| s.len() != width || s.all().iter().any(|&i| i >= n)) {
                return Err(Error::Invalid(format!("replayed samples do not fit {t} steps of {n} nodes")));
            }
            sets.to_vec()
        }
    };

    let pack = project_message(tape, q, k, v, &trace.samples)?;
    trace.attention.push(("message", pack.attention));

    // re-attention: every node attends to the sampled projections
    let rq = p.re_query.forward(tape, store, h)?;
    let rk = p.re_key.forward(tape, store, pack.p_s)?;
    let rv = p.re_value.forward(tape, store, pack.message)?;
    let scores = tape.bmm_nt(rq, rk)?;
    let scores = scale_dk(tape, scores, d);
    let re_att = tape.softmax_last(scores)?;
    trace.attention.push(("reattention", re_att));
    let ctx = tape.bmm(re_att, rv)?;
    let out = p.re_out.forward(tape, store, ctx)?;
    let mut r = tape.add(x, out)?;

    if p.graph_weight.is_some() || opts.want_graph {
        let graph_start = tape.flops();
        let refraction = tape.param(store, p.refraction);
        let (a_s, adj) = dgsl(tape, q, pack.k_s, pack.message, refraction)?;
        trace.attention.push(("sampled", a_s));
        trace.adjacency = Some(adj);
        if let Some(gw) = p.graph_weight {
            let hv = p.re_value.forward(tape, store, h)?;
            let agg = tape.bmm(adj, hv)?;
            let gamma = tape.param(store, gw);
            let agg = tape.mul_scalar(agg, gamma)?;
            r = tape.add(r, agg)?;
        }
        trace.graph_flops = tape.flops() - graph_start;
    }

    let h2 = p.norm_ffn.forward(tape, store, r)?;
    let f = p.ffn.forward(tape, store, h2)?;
    let y = tape.add(r, f)?;
    trace.flops = tape.flops() - flops_start;
    Ok((y, trace))
}

#[cfg(test)]
mod tests;
