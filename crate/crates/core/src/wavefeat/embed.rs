use rand::Rng;

use super::features::{sparsity_features, split_series, time_features};
use super::wavelet::WaveletConfig;
use crate::datakit::TrafficWindow;
use crate::numcore::{glorot_uniform, ops, Array, ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Observation-expert input width: value plus two sparsity channels.
pub const D_OE: usize = 3;
/// Channels entering the expansion MLP: value, low, high, time of day, weekday.
pub const MLP_INPUTS: usize = 5;

/// Expansion MLP and the spatio-temporal positional table.
#[derive(Clone, Debug)]
pub struct EmbedParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// `T_max × N × D_pe`
    pub p_st: ParamId,
    pub d_in: usize,
    pub d_pe: usize,
    pub t_max: usize,
    pub n_nodes: usize,
}

impl EmbedParams {
    pub fn register(
        store: &mut ParamStore,
        d_in: usize,
        d_pe: usize,
        t_max: usize,
        n_nodes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_pe >= d_in {
            return Err(Error::Invalid(format!("d_pe ({d_pe}) must be smaller than d_in ({d_in})")));
        }
        let width = d_in - d_pe;
        Ok(Self {
            w1: store.add_weight("embed.mlp.w1", MLP_INPUTS, width, rng)?,
            b1: store.add_zeros("embed.mlp.b1", &[width])?,
            w2: store.add_weight("embed.mlp.w2", width, width, rng)?,
            b2: store.add_zeros("embed.mlp.b2", &[width])?,
            p_st: store.add("embed.p_st", glorot_uniform(&[t_max, n_nodes, d_pe], d_pe, d_pe, rng))?,
            d_in,
            d_pe,
            t_max,
            n_nodes,
        })
    }
}

/// Both expert input streams, recorded on a tape.
#[derive(Clone, Debug)]
pub struct EmbeddedBatch {
    /// `T×N×3`, data only.
    pub x_oe: Var,
    /// `T×N×D_in`
    pub x_in: Var,
    pub mask: Array,
}

/// Data-only features of a normalized, zero-filled window:
/// the observation-expert input `T×N×3` and the MLP input `T×N×5`.
pub fn raw_features(w: &TrafficWindow, cfg: &WaveletConfig) -> Result<(Array, Array)> {
    let (t, n) = (w.n_steps(), w.n_nodes());
    let values = &w.values;
    let x_oe = ops::concat(&[values, &sparsity_features(&w.mask)], 2)?;
    let (low, high) = split_series(values, cfg)?;
    let low = low.into_shape(&[t, n, 1])?;
    let high = high.into_shape(&[t, n, 1])?;
    let p_u = time_features(&w.timestamps, n);
    let mlp_in = ops::concat(&[values, &low, &high, &p_u], 2)?;
    Ok((x_oe, mlp_in))
}

/// `x_oe = ⟨values ∥ P_sp⟩`, `x_in = ⟨MLP(values, low, high, P_u) ∥ P_st[..T]⟩`.
pub fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbedParams,
    w: &TrafficWindow,
    cfg: &WaveletConfig,
) -> Result<EmbeddedBatch> {
    let (t, n) = (w.n_steps(), w.n_nodes());
    if t > params.t_max {
        return Err(Error::Invalid(format!(
            "window of {t} steps exceeds the positional table length {}",
            params.t_max
        )));
    }
    if n != params.n_nodes {
        return Err(Error::Invalid(format!("window has {n} nodes, model expects {}", params.n_nodes)));
    }
    let (x_oe, mlp_in) = raw_features(w, cfg)?;
    let x_oe = tape.constant(x_oe);
    let mlp_in = tape.constant(mlp_in);
    let (w1, b1) = (tape.param(store, params.w1), tape.param(store, params.b1));
    let (w2, b2) = (tape.param(store, params.w2), tape.param(store, params.b2));
    let h = tape.linear(mlp_in, w1, Some(b1))?;
    let h = tape.relu(h);
    let expanded = tape.linear(h, w2, Some(b2))?;
    let p_st = tape.param(store, params.p_st);
    let pos = tape.slice(p_st, 0, 0, t)?;
    let x_in = tape.concat(&[expanded, pos], 2)?;
    Ok(EmbeddedBatch {
        x_oe,
        x_in,
        mask: w.mask.clone(),
    })
}
