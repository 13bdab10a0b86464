//! Temporal expert: a pre-norm transformer encoder layer that attends along
//! the time axis, independently for every node.

use rand::Rng;

use crate::layers::{Dropout, FeedForward, LayerNormParams, LinearParams};
use crate::numcore::{NumError, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct MsatParams {
    pub norm_attn: LayerNormParams,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub out: LinearParams,
    pub norm_ffn: LayerNormParams,
    pub ffn: FeedForward,
    pub heads: usize,
    pub d_model: usize,
}

impl MsatParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NumError> {
        if heads == 0 || d_model % heads != 0 {
            return Err(NumError::Shape(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        Ok(Self {
            norm_attn: LayerNormParams::register(store, &format!("{name}.norm_attn"), d_model)?,
            query: LinearParams::register(store, &format!("{name}.query"), d_model, d_model, true, rng)?,
            // a key bias shifts every score in a row equally, so it is omitted
            key: LinearParams::register(store, &format!("{name}.key"), d_model, d_model, false, rng)?,
            value: LinearParams::register(store, &format!("{name}.value"), d_model, d_model, true, rng)?,
            out: LinearParams::register(store, &format!("{name}.out"), d_model, d_model, true, rng)?,
            norm_ffn: LayerNormParams::register(store, &format!("{name}.norm_ffn"), d_model)?,
            ffn: FeedForward::register(store, &format!("{name}.ffn"), d_model, ffn_hidden, rng)?,
            heads,
            d_model,
        })
    }
}

/// `[N, T, D] → [N·H, T, d_k]`
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var, NumError> {
    let s = tape.shape(x).to_vec();
    let (n, t, d) = (s[0], s[1], s[2]);
    let dk = d / heads;
    let x = tape.reshape(x, &[n, t, heads, dk])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[n * heads, t, dk])
}

/// `[N·H, T, d_k] → [N, T, D]`
fn merge_heads(tape: &mut Tape, x: Var, n: usize, heads: usize) -> Result<Var, NumError> {
    let s = tape.shape(x).to_vec();
    let (t, dk) = (s[1], s[2]);
    let x = tape.reshape(x, &[n, heads, t, dk])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[n, t, heads * dk])
}

/// Runs the layer on `x: T×N×D`. When `attention` is given, the per-node,
/// per-head weights `[N·H, T, T]` are pushed onto it.
pub fn msat_forward(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MsatParams,
    x: Var,
    dropout: Option<&mut Dropout>,
    attention: Option<&mut Vec<Var>>,
) -> Result<Var, NumError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[2] != p.d_model {
        return Err(NumError::Shape(format!("temporal expert expects T×N×{}, got {s:?}", p.d_model)));
    }
    let n = s[1];
    let dk = p.d_model / p.heads;
    let xt = tape.permute(x, &[1, 0, 2])?;
    let h = p.norm_attn.forward(tape, store, xt)?;
    let q = p.query.forward(tape, store, h)?;
    let k = p.key.forward(tape, store, h)?;
    let v = p.value.forward(tape, store, h)?;
    let q = split_heads(tape, q, p.heads)?;
    let k = split_heads(tape, k, p.heads)?;
    let v = split_heads(tape, v, p.heads)?;
    let scores = tape.bmm_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax_last(scores)?;
    if let Some(list) = attention {
        list.push(weights);
    }
    let weights = match dropout {
        Some(d) => d.apply(tape, weights)?,
        None => weights,
    };
    let ctx = tape.bmm(weights, v)?;
    let ctx = merge_heads(tape, ctx, n, p.heads)?;
    let attn_out = p.out.forward(tape, store, ctx)?;
    let r = tape.add(xt, attn_out)?;
    let h2 = p.norm_ffn.forward(tape, store, r)?;
    let f = p.ffn.forward(tape, store, h2)?;
    let y = tape.add(r, f)?;
    tape.permute(y, &[1, 0, 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{check_parameter_gradients, ops, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, heads: usize, seed: u64) -> (ParamStore, MsatParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MsatParams::register(&mut store, "t", d, heads, 2 * d, &mut rng).unwrap();
        // non-trivial norm affine so the check covers those paths too
        for id in [p.norm_attn.gain, p.norm_attn.bias, p.norm_ffn.gain, p.norm_ffn.bias] {
            for v in store.get_mut(id).value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        (store, p)
    }

    fn input(shape: &[usize], seed: u64) -> Array {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shape_preserved_and_rows_stochastic() {
        let (store, p) = setup(8, 2, 1);
        let mut tape = Tape::new();
        let x = tape.constant(input(&[7, 3, 8], 2));
        let mut att = Vec::new();
        let y = msat_forward(&mut tape, &store, &p, x, None, Some(&mut att)).unwrap();
        assert_eq!(tape.shape(y), &[7, 3, 8]);
        let a = tape.value(att[0]);
        assert_eq!(a.shape(), &[6, 7, 7]);
        for row in a.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn node_permutation_equivariance() {
        let (store, p) = setup(8, 4, 3);
        let x = input(&[5, 4, 8], 4);
        let perm = [2, 0, 3, 1];
        let xp = ops::gather(&x, &perm, 1).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(xp);
        let ya = msat_forward(&mut tape, &store, &p, a, None, None).unwrap();
        let yb = msat_forward(&mut tape, &store, &p, b, None, None).unwrap();
        let ya_p = ops::gather(tape.value(ya), &perm, 1).unwrap();
        assert_eq!(&ya_p, tape.value(yb));
    }

    #[test]
    fn single_step_matches_hand_composition() {
        let d = 6;
        let (store, p) = setup(d, 2, 5);
        let x = input(&[1, 1, d], 6);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut att = Vec::new();
        let y = msat_forward(&mut tape, &store, &p, xv, None, Some(&mut att)).unwrap();
        assert!(tape.value(att[0]).data().iter().all(|&w| w == 1.0));

        let val = |id| store.value(id);
        let affine = |x: &Array, ln: &LayerNormParams| {
            let n = ops::layer_norm(x, ln.eps);
            ops::add(&ops::mul(&n, &val(ln.gain).reshape(&[1, 1, d]).unwrap()).unwrap(), &val(ln.bias).reshape(&[1, 1, d]).unwrap()).unwrap()
        };
        let lin = |x: &Array, l: &LinearParams| ops::linear(x, val(l.w), val(l.b.unwrap())).unwrap();
        // with one step the attention is the identity over values
        let attn = lin(&lin(&affine(&x, &p.norm_attn), &p.value), &p.out);
        let r = ops::add(&x, &attn).unwrap();
        let ffn = ops::mlp(
            &affine(&r, &p.norm_ffn),
            &[
                (val(p.ffn.up.w), val(p.ffn.up.b.unwrap())),
                (val(p.ffn.down.w), val(p.ffn.down.b.unwrap())),
            ],
        )
        .unwrap();
        let expect = ops::add(&r, &ffn).unwrap();
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gradient_check() {
        let (mut store, p) = setup(8, 2, 7);
        let x = input(&[6, 3, 8], 8);
        let target = input(&[6, 3, 8], 9);
        let report = check_parameter_gradients(
            &mut store,
            1e-5,
            |st, tape| {
                let xv = tape.constant(x.clone());
                let y = msat_forward(tape, st, &p, xv, None, None)?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.mul(d, d)?;
                Ok(tape.sum(sq))
            },
            None,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MsatParams::register(&mut store, "t", 6, 4, 8, &mut rng).is_err());
        let (store, p) = setup(8, 2, 1);
        let mut tape = Tape::new();
        let x = tape.constant(Array::zeros(&[3, 2, 6]));
        assert!(msat_forward(&mut tape, &store, &p, x, None, None).is_err());
    }
}
