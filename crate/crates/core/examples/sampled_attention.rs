//! Run one sampled graph-attention spatial expert and show what it samples,
//! the shapes of its attention maps and how its cost grows with N.
//!
//! `cargo run --example sampled_attention`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stam::datakit::{generate_synthetic, SynthParams};
use stam::lrsgat::{sample_size, spatial_expert_forward, LrsgatParams, Sampling, SpatialOptions};
use stam::numcore::{Array, ParamStore, Tape};

fn run(n: usize, verbose: bool) -> stam::Result<u64> {
    let (d, t) = (16, 6);
    let (_, graph, _) = generate_synthetic(n, 1, 3, &SynthParams::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let p = LrsgatParams::register(&mut store, "spatial", d, n, graph.e_per_node, 2 * d, true, &mut rng)?;
    let x = Array::from_fn(&[t, n, d], |i| ((i * 37 % 101) as f64 / 50.0) - 1.0);
    let mut tape = Tape::new();
    let (xs, xt) = (tape.constant(x.clone()), tape.constant(x));
    let opts = SpatialOptions {
        sampling: Sampling::Draw(&mut rng),
        want_graph: true,
    };
    let (out, trace) = spatial_expert_forward(&mut tape, &store, &p, xs, xt, &graph, opts)?;
    if verbose {
        println!("N = {n}, S = {}, output {:?}", sample_size(n), tape.shape(out));
        println!("step 0 top nodes {:?}, random nodes {:?}", trace.samples[0].top_nodes, trace.samples[0].random_nodes);
        for (role, v) in &trace.attention {
            println!("  {role:12} attention {:?}", tape.shape(*v));
        }
        if let Some(adj) = trace.adjacency {
            println!("  dynamic graph {:?}", tape.shape(adj));
        }
    }
    Ok(trace.path_flops())
}

fn main() -> stam::Result<()> {
    run(40, true)?;
    let mut prev = run(32, false)?;
    for n in [64, 128, 256] {
        let f = run(n, false)?;
        println!("N = {n:3}: {f} FLOPs on the sampled path, ×{:.2} over N/2", f as f64 / prev as f64);
        prev = f;
    }
    Ok(())
}
