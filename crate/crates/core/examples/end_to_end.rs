//! Synthesize a network, hide 25% of its readings, train, and compare the
//! imputation error against the Mean and KNN baselines.
//!
//! `cargo run --release --example end_to_end -- [nodes] [steps] [epochs]`

use std::time::Instant;

use stam::datakit::{apply_missing, generate_synthetic, MissingKind, MissingSpec, SynthParams};
use stam::moe::MoeConfig;
use stam::trainer::{build_model, impute, knn_impute, mean_impute, score, train, TrainConfig};
use stam::wavefeat::WaveletConfig;

fn main() -> stam::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let nodes = args.first().copied().unwrap_or(30);
    let steps = args.get(1).copied().unwrap_or(1024);
    let epochs = args.get(2).copied().unwrap_or(5);

    let (series, graph, _) = generate_synthetic(nodes, steps, 1, &SynthParams::default())?;
    let truth = series.values_2d();
    let spec = MissingSpec {
        kind: MissingKind::point(0.25),
        seed: 2,
    };
    let (holdout, eval_mask) = apply_missing(&series, &spec)?;

    let config = MoeConfig::default();
    let train_cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let mut model = build_model(&config, WaveletConfig::default(), &train_cfg, &holdout, &graph)?;
    let clock = Instant::now();
    let (stats, report) = train(&mut model, &holdout, &graph, &train_cfg)?;
    println!(
        "trained {} epochs ({} steps) in {:.1}s, best epoch {}",
        report.epochs_run,
        report.loss_history.len(),
        clock.elapsed().as_secs_f64(),
        report.best_epoch
    );

    let ours = score(&impute(&model, &holdout, &graph, &stats, train_cfg.eval_seed)?, &truth, &eval_mask)?;
    let mean = score(&mean_impute(&holdout)?, &truth, &eval_mask)?;
    let knn = score(&knn_impute(&holdout, &graph)?, &truth, &eval_mask)?;
    println!("cells {}", ours.cells);
    println!("model  MAE {:8.3}  RMSE {:8.3}", ours.mae, ours.rmse);
    println!("mean   MAE {:8.3}  RMSE {:8.3}", mean.mae, mean.rmse);
    println!("knn    MAE {:8.3}  RMSE {:8.3}", knn.mae, knn.rmse);
    Ok(())
}
