use super::*;
use crate::datakit::build_knn_graph;
use crate::numcore::check_parameter_gradients;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn knn(n: usize, e: usize, seed: u64) -> StaticGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = Array::from_fn(&[n, n], |i| {
        let (a, b) = (pts[i / n], pts[i % n]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    });
    build_knn_graph(&dist, e).unwrap()
}

fn setup(n: usize, e: usize, d: usize, fusion: bool, seed: u64) -> (ParamStore, LrsgatParams, StaticGraph) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LrsgatParams::register(&mut store, "s", d, n, e, 2 * d, fusion, &mut rng).unwrap();
    (store, p, knn(n, e, seed + 100))
}

fn run(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LrsgatParams,
    g: &StaticGraph,
    xs: &Array,
    xt: &Array,
    seed: u64,
) -> (Var, SpatialTrace) {
    let a = tape.constant(xs.clone());
    let b = tape.constant(xt.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SpatialOptions {
        sampling: Sampling::Draw(&mut rng),
        want_graph: true,
    };
    spatial_expert_forward(tape, store, p, a, b, g, opts).unwrap()
}

fn assert_stochastic(a: &Array, tol: f64) {
    let w = *a.shape().last().unwrap();
    for row in a.data().chunks(w) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < tol);
    }
}

#[test]
fn local_attention_uniform_on_identical_nodes() {
    let g = knn(6, 3, 1);
    let mut tape = Tape::new();
    let row = random(&[1, 1, 4], 2);
    let q = tape.constant(Array::from_fn(&[2, 6, 4], |i| row.data()[i % 4]));
    let e = local_graph_attention(&mut tape, q, q, &g).unwrap();
    assert_eq!(tape.shape(e), &[2, 6, 3]);
    assert!(tape.value(e).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn local_attention_matches_dense_masked_oracle() {
    for (n, e) in [(5, 2), (8, 3), (7, 6)] {
        let g = knn(n, e, n as u64);
        let (t, d) = (3, 4);
        let qa = random(&[t, n, d], 10);
        let ka = random(&[t, n, d], 11);
        let mut tape = Tape::new();
        let (q, k) = (tape.constant(qa.clone()), tape.constant(ka.clone()));
        let att = local_graph_attention(&mut tape, q, k, &g).unwrap();
        let att = tape.value(att);
        assert_stochastic(att, 1e-9);
        for s in 0..t {
            for i in 0..n {
                let mut logits = vec![f64::NEG_INFINITY; n];
                for &j in &g.neighbors[i] {
                    let dot: f64 = (0..d).map(|c| qa.get(&[s, i, c]) * ka.get(&[s, j, c])).sum();
                    logits[j] = dot / (d as f64).sqrt();
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for (slot, &j) in g.neighbors[i].iter().enumerate() {
                    let want = (logits[j] - m).exp() / z;
                    assert!((att.get(&[s, i, slot]) - want).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn significance_scores_cases() {
    let mut tape = Tape::new();
    let g = knn(5, 3, 3);
    let qa = random(&[2, 5, 4], 4);
    let q = tape.constant(qa);
    let e_g = local_graph_attention(&mut tape, q, q, &g).unwrap();
    let ones = tape.constant(Array::full(&[3, 1], 1.0));
    let s = significance_scores(&mut tape, e_g, ones).unwrap();
    assert!(tape.value(s).data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    let unit = tape.constant(Array::new(vec![3, 1], vec![1.0, 0.0, 0.0]).unwrap());
    let s = significance_scores(&mut tape, e_g, unit).unwrap();
    for i in 0..10 {
        assert_eq!(tape.value(s).data()[i], tape.value(e_g).data()[i * 3]);
    }
    let wa = random(&[3, 1], 5);
    let w = tape.constant(wa.clone());
    let s = significance_scores(&mut tape, e_g, w).unwrap();
    assert_eq!(tape.shape(s), &[2, 5]);
    for i in 0..10 {
        let want: f64 = (0..3).map(|c| tape.value(e_g).data()[i * 3 + c] * wa.data()[c]).sum();
        assert!((tape.value(s).data()[i] - want).abs() < 1e-14);
    }
}

#[test]
fn message_with_identical_keys_is_value_mean() {
    let (n, d) = (6, 3);
    let mut tape = Tape::new();
    let q = tape.constant(random(&[1, n, d], 1));
    let k = tape.constant(Array::full(&[1, n, d], 0.7));
    let va = random(&[1, n, d], 2);
    let v = tape.constant(va.clone());
    let sets = [SampleSet {
        top_nodes: vec![4, 0, 2],
        random_nodes: vec![5, 1, 3],
    }];
    let pack = project_message(&mut tape, q, k, v, &sets).unwrap();
    assert_eq!(tape.shape(pack.attention), &[1, 6, n]);
    assert_stochastic(tape.value(pack.attention), 1e-9);
    for r in 0..6 {
        for c in 0..d {
            let mean = (0..n).map(|j| va.get(&[0, j, c])).sum::<f64>() / n as f64;
            assert!((tape.value(pack.message).get(&[0, r, c]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn two_nodes_projection_is_row_permutation() {
    let mut tape = Tape::new();
    let qa = random(&[1, 2, 4], 7);
    let q = tape.constant(qa.clone());
    let sets = [SampleSet {
        top_nodes: vec![1],
        random_nodes: vec![0],
    }];
    let pack = project_message(&mut tape, q, q, q, &sets).unwrap();
    let p = tape.value(pack.p_s);
    for c in 0..4 {
        assert_eq!(p.get(&[0, 0, c]), qa.get(&[0, 1, c]));
        assert_eq!(p.get(&[0, 1, c]), qa.get(&[0, 0, c]));
    }
}

#[test]
fn zero_value_projection_leaves_residual_path() {
    let (n, d) = (7, 6);
    let (mut store, p, g) = setup(n, 3, d, true, 4);
    for id in [p.re_value.w, p.re_value.b.unwrap()] {
        store.get_mut(id).value.data_mut().fill(0.0);
    }
    let xs = random(&[3, n, d], 1);
    let xt = random(&[3, n, d], 2);
    let mut tape = Tape::new();
    let (y, _) = run(&mut tape, &store, &p, &g, &xs, &xt, 0);

    let val = |id| store.value(id);
    let x = ops::linear(&ops::concat(&[&xs, &xt], 2).unwrap(), val(p.fusion.w), val(p.fusion.b.unwrap())).unwrap();
    let normed = ops::layer_norm(&x, p.norm_ffn.eps);
    // norm gain 1 and bias 0 at initialisation
    let f = ops::mlp(
        &normed,
        &[
            (val(p.ffn.up.w), val(p.ffn.up.b.unwrap())),
            (val(p.ffn.down.w), val(p.ffn.down.b.unwrap())),
        ],
    )
    .unwrap();
    let want = ops::add(&x, &f).unwrap();
    assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
}

#[test]
fn dgsl_rows_and_flat_case() {
    let (t, n, s2, d) = (2, 9, 4, 5);
    let mut tape = Tape::new();
    let q = tape.constant(random(&[t, n, d], 1));
    let ks = tape.constant(random(&[t, s2, d], 2));
    let m = tape.constant(random(&[t, s2, d], 3));
    let r = tape.constant(random(&[n, d], 4));
    let (a_s, adj) = dgsl(&mut tape, q, ks, m, r).unwrap();
    assert_eq!(tape.shape(a_s), &[t, n, s2]);
    assert_eq!(tape.shape(adj), &[t, n, n]);
    assert_stochastic(tape.value(a_s), 1e-9);
    assert_stochastic(tape.value(adj), 1e-6);

    // m E^refᵀ all equal: toph keeps everything and every row is uniform
    let zero = tape.constant(Array::zeros(&[n, d]));
    let (_, adj) = dgsl(&mut tape, q, ks, m, zero).unwrap();
    assert!(tape.value(adj).data().iter().all(|&v| (v - 1.0 / n as f64).abs() < 1e-15));
}

#[test]
fn adaptive_reference_is_row_stochastic() {
    let adj = adaptive_adjacency(&random(&[10, 3], 1), &random(&[10, 3], 2)).unwrap();
    assert_eq!(adj.shape(), &[10, 10]);
    assert_stochastic(&adj, 1e-12);
}

#[test]
fn forward_shapes_invariants_and_determinism() {
    let (n, d, t) = (12, 8, 5);
    let xs = random(&[t, n, d], 1);
    let xt = random(&[t, n, d], 2);
    let mut outputs = Vec::new();
    for fusion in [true, false] {
        let (store, p, g) = setup(n, 3, d, fusion, 9);
        let mut tape = Tape::new();
        let (y, tr) = run(&mut tape, &store, &p, &g, &xs, &xt, 42);
        let mut again = Tape::new();
        let (y2, tr2) = run(&mut again, &store, &p, &g, &xs, &xt, 42);
        assert_eq!(tape.value(y), again.value(y2));
        assert_eq!(tr.samples, tr2.samples);
        assert_eq!(tape.shape(y), &[t, n, d]);
        let width = 2 * sample_size(n);
        for (role, v) in &tr.attention {
            assert_stochastic(tape.value(*v), 1e-9);
            let want: Vec<usize> = match *role {
                "local" => vec![t, n, 3],
                "message" => vec![t, width, n],
                _ => vec![t, n, width],
            };
            assert_eq!(tape.shape(*v), want.as_slice(), "{role}");
        }
        assert_stochastic(tape.value(tr.adjacency.unwrap()), 1e-6);
        outputs.push(tape.value(y).clone());
    }
    assert!(outputs[0].max_abs_diff(&outputs[1]) > 1e-6);
}

#[test]
fn sampling_seed_changes_output() {
    let (n, d) = (16, 8);
    let (store, p, g) = setup(n, 3, d, true, 2);
    let xs = random(&[2, n, d], 1);
    let xt = random(&[2, n, d], 2);
    let mut ta = Tape::new();
    let (ya, sa) = run(&mut ta, &store, &p, &g, &xs, &xt, 1);
    let mut tb = Tape::new();
    let (yb, sb) = run(&mut tb, &store, &p, &g, &xs, &xt, 2);
    assert_ne!(sa.samples, sb.samples);
    assert!(ta.value(ya).max_abs_diff(tb.value(yb)) > 0.0);
}

#[test]
fn replay_reproduces_draw() {
    let (n, d) = (10, 8);
    let (store, p, g) = setup(n, 3, d, true, 5);
    let xs = random(&[3, n, d], 1);
    let xt = random(&[3, n, d], 2);
    let mut tape = Tape::new();
    let (y, tr) = run(&mut tape, &store, &p, &g, &xs, &xt, 7);
    let mut again = Tape::new();
    let a = again.constant(xs.clone());
    let b = again.constant(xt.clone());
    let opts = SpatialOptions::<ChaCha8Rng> {
        sampling: Sampling::Replay(&tr.samples),
        want_graph: false,
    };
    let (y2, _) = spatial_expert_forward(&mut again, &store, &p, a, b, &g, opts).unwrap();
    assert_eq!(tape.value(y), again.value(y2));

    let bad = &tr.samples[..2];
    let opts = SpatialOptions::<ChaCha8Rng> {
        sampling: Sampling::Replay(bad),
        want_graph: false,
    };
    assert!(spatial_expert_forward(&mut again, &store, &p, a, b, &g, opts).is_err());
}

fn gradient_check(n: usize, t: usize, d: usize) {
    let (mut store, p, g) = setup(n, 3, d, true, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for id in [p.norm_attn.gain, p.norm_ffn.gain] {
        for v in store.get_mut(id).value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let xs = random(&[t, n, d], 1);
    let xt = random(&[t, n, d], 2);
    let target = random(&[t, n, d], 3);
    let mut tape = Tape::new();
    let (_, tr) = run(&mut tape, &store, &p, &g, &xs, &xt, 4);
    let samples = tr.samples;
    let report = check_parameter_gradients(
        &mut store,
        1e-5,
        |st, tape| {
            let a = tape.constant(xs.clone());
            let b = tape.constant(xt.clone());
            let opts = SpatialOptions::<ChaCha8Rng> {
                sampling: Sampling::Replay(&samples),
                want_graph: false,
            };
            let (y, _) = spatial_expert_forward(tape, st, &p, a, b, &g, opts)
                .map_err(|e| crate::numcore::NumError::Shape(e.to_string()))?;
            let c = tape.constant(target.clone());
            let diff = tape.sub(y, c)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum(sq);
            // mean, so finite-difference roundoff stays well under the gradients
            Ok(tape.scale(total, 1.0 / target.len() as f64))
        },
        None,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradient_check_six_nodes() {
    gradient_check(6, 3, 8);
}

#[test]
fn gradient_check_eight_nodes() {
    gradient_check(8, 4, 8);
}

#[test]
fn path_flops_grow_like_n_log_n() {
    let d = 8;
    let flops = |n: usize| {
        let (store, p, g) = setup(n, 4, d, true, 1);
        let xs = random(&[4, n, d], 1);
        let mut tape = Tape::new();
        let (_, tr) = run(&mut tape, &store, &p, &g, &xs, &xs, 0);
        assert!(tr.graph_flops > 0);
        tr.path_flops() as f64
    };
    for n in [32, 64, 128] {
        let ratio = flops(2 * n) / flops(n);
        assert!((2.0..=2.6).contains(&ratio), "N = {n}: {ratio}");
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let (store, p, g) = setup(6, 3, 8, true, 0);
    let mut tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 5, 8]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = SpatialOptions {
        sampling: Sampling::Draw(&mut rng),
        want_graph: false,
    };
    assert!(spatial_expert_forward(&mut tape, &store, &p, a, a, &g, opts).is_err());
    let other = knn(6, 2, 0);
    let b = tape.constant(Array::zeros(&[2, 6, 8]));
    let opts = SpatialOptions {
        sampling: Sampling::Draw(&mut rng),
        want_graph: false,
    };
    assert!(spatial_expert_forward(&mut tape, &store, &p, b, b, &other, opts).is_err());
}

