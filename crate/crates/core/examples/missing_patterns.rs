//! Generate a synthetic sensor network, inject point and block missingness,
//! and save both datasets as CSV.
//!
//! `cargo run --example missing_patterns -- [out-dir]`

use std::path::PathBuf;

use stam::datakit::{apply_missing, generate_synthetic, save_dataset, write_dist_csv, MissingKind, MissingSpec, SynthParams};

fn main() -> stam::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("stam-missing"), PathBuf::from);
    let (series, graph, dist) = generate_synthetic(30, 2000, 1, &SynthParams::default())?;
    println!("{} nodes × {} steps, {} neighbours per node", series.n_nodes(), series.n_steps(), graph.e_per_node);

    for (name, kind) in [
        ("point25", MissingKind::point(0.25)),
        ("block1", MissingKind::block(0.01)),
        ("block02", MissingKind::block(0.002)),
    ] {
        let (masked, eval) = apply_missing(&series, &MissingSpec { kind, seed: 7 })?;
        let hidden = 1.0 - masked.observed_count() as f64 / masked.mask.len() as f64;
        let dir = out.join(name);
        save_dataset(&masked, &dir)?;
        write_dist_csv(&dir.join("dist.csv"), &dist)?;
        println!("{name:8} hidden {hidden:.3} ({} eval cells) → {}", eval.sum(), dir.display());
    }
    Ok(())
}
