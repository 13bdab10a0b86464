//! Save a model with its normalization statistics, load it back and confirm
//! the imputations agree bit for bit.
//!
//! `cargo run --example checkpoint`

use stam::datakit::{apply_missing, generate_synthetic, MissingKind, MissingSpec, NormStats, SynthParams};
use stam::moe::{load_checkpoint, save_checkpoint, MoeConfig};
use stam::trainer::{build_model, impute, TrainConfig};
use stam::wavefeat::WaveletConfig;

fn main() -> stam::Result<()> {
    let (series, graph, _) = generate_synthetic(10, 96, 2, &SynthParams::default())?;
    let (holdout, _) = apply_missing(&series, &MissingSpec { kind: MissingKind::point(0.3), seed: 5 })?;
    let config = MoeConfig {
        d_in: 16,
        d_pe: 4,
        ..MoeConfig::default()
    };
    let model = build_model(&config, WaveletConfig::default(), &TrainConfig::default(), &holdout, &graph)?;
    let stats = NormStats::from_window(&holdout);

    let dir = std::env::temp_dir().join("stam-checkpoint-example");
    save_checkpoint(&model, &stats, "example", &dir)?;
    let (loaded, manifest) = load_checkpoint(&dir)?;
    println!("{} parameter files, format version {}", manifest.params.len(), manifest.version);

    let a = impute(&model, &holdout, &graph, &stats, 1)?;
    let b = impute(&loaded, &holdout, &graph, &manifest.norm, 1)?;
    println!("imputations identical after reload: {}", a == b);
    Ok(())
}
