//! The `stam` command line: synthesize, mask, train, impute, evaluate,
//! export learned graphs, dump wavelet features and run the gradient check.
//!
//! Exit status is 0 on success, 1 for bad input and 2 for internal failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{hash_str, RunConfig};
use crate::datakit::{
    apply_missing, build_knn_graph, generate_synthetic, load_dataset, load_dir, normalize, read_dist_csv,
    read_mask_csv, save_dataset, write_dist_csv, write_mask_csv, write_values_csv, BlockSpec, MissingKind,
    MissingSpec, StaticGraph, SynthParams, TrafficWindow,
};
use crate::moe::{load_checkpoint, save_checkpoint, StamModel};
use crate::numcore::Array;
use crate::trainer::{
    apply_stats, build_model, dynamic_graphs, grad_check, impute, knn_impute, mean_graph, mean_impute, score, train,
    GradCheckDims, Metrics,
};
use crate::wavefeat::split_series;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "stam", version, about = "Spatio-temporal traffic imputation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network: values.csv, dist.csv, meta.json.
    Synth(SynthArgs),
    /// Hide readings: masked values.csv, mask.csv, eval_mask.csv.
    Mask(MaskArgs),
    /// Fit a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Fill the missing cells of a dataset.
    Impute(ImputeArgs),
    /// Score a checkpoint or a baseline on the eval_mask cells.
    Eval(EvalArgs),
    /// Write the learned dynamic adjacency matrices.
    ExportGraph(ExportGraphArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Write the wavelet low/high components of the normalized series.
    DumpFeatures(DumpFeaturesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub nodes: usize,
    #[arg(long, default_value_t = 2048)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    Point,
    Block,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long, value_enum)]
    pub pattern: Pattern,
    /// Point-missing rate.
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.01)]
    pub failure_prob: f64,
    #[arg(long, default_value_t = 12)]
    pub min_len: usize,
    #[arg(long, default_value_t = 48)]
    pub max_len: usize,
    /// Residual point rate of the block pattern.
    #[arg(long, default_value_t = 0.05)]
    pub point_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Checkpoint directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Output CSV of the completed series.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Mean,
    Knn,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("imputer").required(true).args(["checkpoint", "baseline"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Supplies `e_per_node` for the KNN baseline.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Masked dataset holding eval_mask.csv.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Untouched ground-truth values CSV.
    #[arg(long)]
    pub truth: PathBuf,
    /// metrics.json to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphMode {
    PerStep,
    Mean,
}

#[derive(Debug, Args)]
pub struct ExportGraphArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = GraphMode::Mean)]
    pub mode: GraphMode,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// nodes,steps,layers,heads,d_in
    #[arg(long, default_value = "8,6,1,2,8")]
    pub dims: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpFeaturesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args`, runs the command, reports errors on stderr and returns
/// the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Mask(a) => cmd_mask(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Impute(a) => cmd_impute(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportGraph(a) => cmd_export_graph(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::DumpFeatures(a) => cmd_dump_features(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.override_seed_from_env()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Refuses to write into the directory a command reads from.
fn distinct_dirs(input: &Path, output: &Path) -> Result<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Invalid(format!("output directory {} is the input directory", output.display())));
    }
    Ok(())
}

/// Static graph from `dir/dist.csv`; the fan-out is capped at `N − 1`.
fn load_graph(dir: &Path, n: usize, e_per_node: usize) -> Result<StaticGraph> {
    let dist = read_dist_csv(&dir.join("dist.csv"))?;
    if dist.shape()[0] != n {
        return Err(Error::Data(format!("dist.csv covers {} nodes, values.csv has {n}", dist.shape()[0])));
    }
    build_knn_graph(&dist, e_per_node.min(n.saturating_sub(1)).max(1))
}

fn load_model(checkpoint: &Path, series: &TrafficWindow) -> Result<(StamModel, crate::moe::Manifest, u64)> {
    let (model, manifest) = load_checkpoint(checkpoint)?;
    if manifest.shape.n_nodes != series.n_nodes() {
        return Err(Error::Data(format!(
            "checkpoint was trained on {} nodes, data has {}",
            manifest.shape.n_nodes,
            series.n_nodes()
        )));
    }
    let run = checkpoint.join("run.json");
    let eval_seed = if run.exists() {
        RunConfig::load(&run)?.train.eval_seed
    } else {
        RunConfig::default().train.eval_seed
    };
    Ok((model, manifest, eval_seed))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let (series, _, dist) = generate_synthetic(a.nodes, a.steps, a.seed, &SynthParams::default())?;
    save_dataset(&series, &a.out_dir)?;
    // every cell is observed, so mask.csv adds nothing
    fs::remove_file(a.out_dir.join("mask.csv"))?;
    write_dist_csv(&a.out_dir.join("dist.csv"), &dist)?;
    Ok(())
}

fn cmd_mask(a: &MaskArgs) -> Result<()> {
    let kind = match a.pattern {
        Pattern::Point => MissingKind::point(a.rate),
        Pattern::Block => MissingKind::Block(BlockSpec {
            failure_prob: a.failure_prob,
            min_len: a.min_len,
            max_len: a.max_len,
            point_rate: a.point_rate,
        }),
    };
    kind.validate()?;
    distinct_dirs(&a.in_dir, &a.out_dir)?;
    let series = load_dir(&a.in_dir)?;
    let (masked, eval) = apply_missing(&series, &MissingSpec { kind, seed: a.seed })?;
    save_dataset(&masked, &a.out_dir)?;
    write_mask_csv(&a.out_dir.join("eval_mask.csv"), &masked.node_ids, &eval)?;
    let dist = a.in_dir.join("dist.csv");
    if dist.exists() {
        fs::copy(&dist, a.out_dir.join("dist.csv"))?;
    }
    let hidden = 1.0 - masked.observed_count() as f64 / masked.mask.len() as f64;
    println!("eval cells {}, total missing fraction {hidden:.4}", eval.sum());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dir = a
        .data_dir
        .clone()
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| Error::Invalid("no data directory: pass --data-dir or set data_dir".into()))?;
    let series = load_dir(&dir)?;
    let graph = load_graph(&dir, series.n_nodes(), cfg.e_per_node)?;
    let mut model = build_model(&cfg.model, cfg.wavelet, &cfg.train, &series, &graph)?;
    let (stats, report) = train(&mut model, &series, &graph, &cfg.train)?;
    let hash = cfg.hash();
    save_checkpoint(&model, &stats, &hash, &a.out)?;
    write_json(&a.out.join("run.json"), &cfg)?;

    let mut w = csv::Writer::from_path(a.out.join("loss_history.csv"))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in report.loss_history.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(a.out.join("val_history.csv"))?;
    w.write_record(["epoch", "val_mae"])?;
    for (i, l) in report.val_history.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    println!(
        "trained {} epochs ({} steps), best epoch {}, config {}",
        report.epochs_run,
        report.loss_history.len(),
        report.best_epoch,
        &hash[..12]
    );
    Ok(())
}

fn cmd_impute(a: &ImputeArgs) -> Result<()> {
    let series = load_dir(&a.data_dir)?;
    let (model, manifest, seed) = load_model(&a.checkpoint, &series)?;
    let graph = load_graph(&a.data_dir, series.n_nodes(), manifest.shape.e_per_node)?;
    let filled = impute(&model, &series, &graph, &manifest.norm, seed)?;
    write_values_csv(&a.out, &series.node_ids, &filled, None)
}

#[derive(Debug, Serialize)]
struct MetricsFile {
    mae: f64,
    rmse: f64,
    cells: usize,
    config_hash: String,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let series = load_dir(&a.data_dir)?;
    let eval_mask = read_mask_csv(&a.data_dir.join("eval_mask.csv"))?;
    if eval_mask.shape() != series.mask.shape() {
        return Err(Error::Data("eval_mask.csv does not match values.csv".into()));
    }
    let truth = load_dataset(&a.truth, None, &a.data_dir.join("meta.json"))?;
    if truth.mask.shape() != series.mask.shape() {
        return Err(Error::Data("truth does not match values.csv".into()));
    }
    if eval_mask.data().iter().zip(truth.mask.data()).any(|(&e, &t)| e == 1.0 && t == 0.0) {
        return Err(Error::Data("truth is missing a cell listed in eval_mask.csv".into()));
    }
    let (filled, config_hash) = match (&a.checkpoint, a.baseline) {
        (Some(ckpt), _) => {
            let (model, manifest, seed) = load_model(ckpt, &series)?;
            let graph = load_graph(&a.data_dir, series.n_nodes(), manifest.shape.e_per_node)?;
            (impute(&model, &series, &graph, &manifest.norm, seed)?, manifest.config_hash)
        }
        (None, Some(Baseline::Mean)) => (mean_impute(&series)?, hash_str("baseline:mean")),
        (None, Some(Baseline::Knn)) => {
            let cfg = load_config(a.config.as_deref())?;
            let graph = load_graph(&a.data_dir, series.n_nodes(), cfg.e_per_node)?;
            let tag = format!("baseline:knn:e{}", graph.e_per_node);
            (knn_impute(&series, &graph)?, hash_str(&tag))
        }
        (None, None) => unreachable!("clap requires one imputer"),
    };
    let Metrics { mae, rmse, cells } = score(&filled, &truth.values_2d(), &eval_mask)?;
    write_json(
        &a.out,
        &MetricsFile {
            mae,
            rmse,
            cells,
            config_hash,
        },
    )?;
    println!("mae {mae:.6} rmse {rmse:.6} cells {cells}");
    Ok(())
}

fn cmd_export_graph(a: &ExportGraphArgs) -> Result<()> {
    let series = load_dir(&a.data_dir)?;
    let (model, manifest, seed) = load_model(&a.checkpoint, &series)?;
    let graph = load_graph(&a.data_dir, series.n_nodes(), manifest.shape.e_per_node)?;
    let normed = apply_stats(&series, &manifest.norm)?;
    let graphs = dynamic_graphs(&model, &normed, &graph, seed)?;
    fs::create_dir_all(&a.out_dir)?;
    match a.mode {
        GraphMode::Mean => write_dist_csv(&a.out_dir.join("graph_mean.csv"), &mean_graph(&graphs)?),
        GraphMode::PerStep => {
            if graphs.is_empty() {
                return Err(Error::Invalid("the checkpoint has no graph-building spatial layers".into()));
            }
            let n = series.n_nodes();
            for (l, g) in graphs.iter().enumerate() {
                let mut w = csv::Writer::from_path(a.out_dir.join(format!("graph_layer{l}.csv")))?;
                let mut header = vec!["step".to_string(), "node".to_string()];
                header.extend(series.node_ids.iter().cloned());
                w.write_record(&header)?;
                for (r, row) in g.data().chunks(n).enumerate() {
                    let mut rec = vec![(r / n).to_string(), series.node_ids[r % n].clone()];
                    rec.extend(row.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
                w.flush()?;
            }
            Ok(())
        }
    }
}

fn parse_dims(s: &str) -> Result<GradCheckDims> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Invalid(format!("--dims expects five integers, got `{s}`")))?;
    let [nodes, steps, layers, heads, d_in] = parts[..] else {
        return Err(Error::Invalid(format!("--dims expects nodes,steps,layers,heads,d_in; got `{s}`")));
    };
    Ok(GradCheckDims {
        nodes,
        steps,
        layers,
        heads,
        d_in,
    })
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let dims = parse_dims(&a.dims)?;
    let report = grad_check(dims, a.eps, a.seed, None)?;
    println!(
        "checked {} coordinates ({} refined, {} skipped): max relative error {:.3e}, max absolute error {:.3e}",
        report.checked, report.refined, report.skipped, report.max_rel_error, report.max_abs_error
    );
    if let Some((name, i)) = &report.worst {
        println!("worst: {name}[{i}]");
    }
    if report.max_rel_error < a.tolerance {
        Ok(())
    } else {
        Err(Error::SelfCheck(format!(
            "relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tolerance
        )))
    }
}

fn cmd_dump_features(a: &DumpFeaturesArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    distinct_dirs(&a.data_dir, &a.out_dir)?;
    let series = load_dir(&a.data_dir)?;
    let (normed, _) = normalize(&series);
    let (low, high) = split_series(&normed.values, &cfg.wavelet)?;
    fs::create_dir_all(&a.out_dir)?;
    let flat = |x: Array| x.into_shape(&[series.n_steps(), series.n_nodes()]);
    write_values_csv(&a.out_dir.join("x_low.csv"), &series.node_ids, &flat(low)?, None)?;
    write_values_csv(&a.out_dir.join("x_high.csv"), &series.node_ids, &flat(high)?, None)?;
    Ok(())
}
