//! Train briefly, then extract the per-step dynamic adjacency and compare
//! its strongest links with the static K-NN graph.
//!
//! `cargo run --release --example dynamic_graph`

use stam::datakit::{apply_missing, generate_synthetic, MissingKind, MissingSpec, SynthParams};
use stam::moe::MoeConfig;
use stam::trainer::{apply_stats, build_model, dynamic_graphs, mean_graph, train, TrainConfig};
use stam::wavefeat::WaveletConfig;

fn main() -> stam::Result<()> {
    let (series, graph, _) = generate_synthetic(16, 480, 4, &SynthParams::default())?;
    let (holdout, _) = apply_missing(&series, &MissingSpec { kind: MissingKind::point(0.25), seed: 1 })?;
    let config = MoeConfig {
        d_in: 32,
        d_pe: 8,
        ffn_hidden: 64,
        readout_hidden: 64,
        ..MoeConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let mut model = build_model(&config, WaveletConfig::default(), &cfg, &holdout, &graph)?;
    let (stats, _) = train(&mut model, &holdout, &graph, &cfg)?;

    let graphs = dynamic_graphs(&model, &apply_stats(&holdout, &stats)?, &graph, cfg.eval_seed)?;
    println!("{} layers of {:?} adjacencies", graphs.len(), graphs[0].shape());
    let mean = mean_graph(&graphs)?;
    let n = series.n_nodes();
    let mut shared = 0;
    for i in 0..n {
        let row = mean.row(i);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let top = &order[..graph.e_per_node];
        shared += top.iter().filter(|j| graph.neighbors[i].contains(j)).count();
        if i < 3 {
            println!("node {i}: strongest learned links {top:?}, static neighbours {:?}", graph.neighbors[i]);
        }
    }
    println!("{shared} of {} strongest learned links are static neighbours", n * graph.e_per_node);
    Ok(())
}
