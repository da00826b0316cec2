//! Command-line front end: dataset generation, training, experiments.
//!
//! Every command resolves one [`RunConfig`], creates the output directory,
//! and drops `config.txt` (the resolved settings) and `VERSION` next to its
//! artifacts, so a result directory is self-describing. Outputs are
//! deterministic given (config, overrides, seed), wall-time columns aside.
//!
//! Exit codes: 0 success, 2 usage, 3 runtime failure or divergence, 4 I/O.

mod config;
mod plots;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{ConfigError, RunConfig};
use plots::Series;
use uwmmse_core::autodiff::{check_gradients, AutodiffError, CheckOptions};
use uwmmse_core::channel::{save_dataset, ChannelError, ChannelSampler};
use uwmmse_core::eval::{self, EvalError, ExperimentResult, HistogramBin};
use uwmmse_core::seed;
use uwmmse_core::train::{
    history_csv, load_checkpoint, save_checkpoint, Checkpoint, TrainError,
};
use uwmmse_core::unfolded::{BatchSumRateLoss, ModelParams};

#[derive(Parser)]
#[command(name = "uwmmse", version, about = "Unrolled WMMSE beamforming workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a channel dataset and write it to the output directory.
    Generate(CommonArgs),
    /// Fit the unrolled network; writes model.ckpt and history.csv.
    Train(CommonArgs),
    /// Run one experiment, usually against a trained checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value settings file; see config.txt in any run directory.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed; per-module seeds derive from it by purpose string.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Worker thread cap; default uses every core.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Single setting override, repeatable; same syntax as the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// One of: compare, generalize, spatial, convergence, robustness,
    /// timing, equivariance, gradcheck.
    #[arg(value_name = "EXPERIMENT")]
    experiment: String,

    /// Trained model; required by everything except gradcheck.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

const EXPERIMENTS: [&str; 8] = [
    "compare",
    "generalize",
    "spatial",
    "convergence",
    "robustness",
    "timing",
    "equivariance",
    "gradcheck",
];

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Resolves the config, validates it, and applies the thread cap.
fn setup(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides, args.seed)?;
    cfg.network
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

/// Creates the output directory and writes the run's provenance files.
fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    write_text(&out.join("config.txt"), &cfg.echo())?;
    write_text(
        &out.join("VERSION"),
        &format!("uwmmse {}\n", env!("CARGO_PKG_VERSION")),
    )
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn cmd_generate(args: CommonArgs) -> Result<(), CliError> {
    let cfg = setup(&args)?;
    let sampler = ChannelSampler::new(
        cfg.network.clone(),
        cfg.spatial,
        cfg.fading,
        seed::derive(cfg.seed, "dataset"),
    );
    let draws = sampler.sample_many(0, cfg.eval.samples);
    prepare_out(&args.out, &cfg)?;
    let path = args.out.join("dataset.bin");
    save_dataset(&path, &draws, cfg.network.d)?;
    println!("wrote {} channel draws to {}", draws.len(), path.display());
    Ok(())
}

fn cmd_train(args: CommonArgs) -> Result<(), CliError> {
    let cfg = setup(&args)?;
    let sampler = ChannelSampler::new(
        cfg.network.clone(),
        cfg.spatial,
        cfg.fading,
        seed::derive(cfg.seed, "train-channels"),
    );
    let mut train_cfg = cfg.train.clone();
    train_cfg.rng_seed = seed::derive(cfg.seed, "train");
    let outcome = uwmmse_core::train::train(&sampler, cfg.hyper, &train_cfg)?;

    prepare_out(&args.out, &cfg)?;
    let ckpt = Checkpoint {
        network: cfg.network.clone(),
        k_train: train_cfg.k_train,
        params: outcome.params,
    };
    save_checkpoint(&args.out.join("model.ckpt"), &ckpt)?;
    write_text(&args.out.join("history.csv"), &history_csv(&outcome.history))?;

    match outcome.history.best_validation() {
        Some(v) => println!(
            "best step {}: validation sum rate {v:.6}",
            outcome.history.best_step
        ),
        None => println!("no validation was recorded"),
    }
    if outcome.history.diverged {
        return Err(CliError::Runtime(
            "training diverged; outputs hold the best parameters seen".to_string(),
        ));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let name = args.experiment.as_str();
    if !EXPERIMENTS.contains(&name) {
        return Err(CliError::Usage(format!(
            "unknown experiment {name:?}; valid names: {}",
            EXPERIMENTS.join(", ")
        )));
    }
    let cfg = setup(&args.common)?;
    let params = match (&args.checkpoint, name) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            check_compat(&ckpt, &cfg)?;
            Some(ckpt.params)
        }
        (None, "gradcheck") => None,
        (None, _) => {
            return Err(CliError::Usage(format!(
                "experiment {name} needs --checkpoint"
            )))
        }
    };
    prepare_out(&args.common.out, &cfg)?;
    // The eval fading may differ from the training one for cross-fading
    // tests; the network shape always comes from the resolved config.
    let sampler = ChannelSampler::new(
        cfg.network.clone(),
        cfg.spatial,
        cfg.eval.fading,
        seed::derive(cfg.seed, "eval-channels"),
    );
    let out = args.common.out.as_path();
    match name {
        "compare" => run_compare(out, &cfg, &sampler, &params.unwrap()),
        "generalize" => run_generalize(out, &cfg, &sampler, &params.unwrap()),
        "spatial" => run_spatial(out, &cfg, &sampler, &params.unwrap()),
        "convergence" => run_convergence(out, &cfg, &sampler, &params.unwrap()),
        "robustness" => run_robustness(out, &cfg, &sampler, &params.unwrap()),
        "timing" => run_timing(out, &cfg, &sampler, &params.unwrap()),
        "equivariance" => run_equivariance(out, &cfg, &sampler, &params.unwrap()),
        "gradcheck" => run_gradcheck(out, &cfg, &sampler),
        _ => unreachable!("experiment list is closed"),
    }
}

/// The parameter blocks are shaped by (t, r, d); a checkpoint trained for
/// a different node shape cannot run, though a different node count can.
fn check_compat(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<(), CliError> {
    let (a, b) = (&ckpt.network, &cfg.network);
    if a.t != b.t || a.r != b.r || a.d != b.d {
        return Err(CliError::Usage(format!(
            "checkpoint was trained for t={} r={} d={}, config asks for t={} r={} d={}",
            a.t, a.r, a.d, b.t, b.r, b.d
        )));
    }
    Ok(())
}

/// The resolved settings as a JSON object, echoed into summaries.
fn config_json(cfg: &RunConfig) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for line in cfg.echo().lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.to_string(), serde_json::Value::String(v.to_string()));
        }
    }
    serde_json::Value::Object(map)
}

fn write_result(
    out: &Path,
    cfg: &RunConfig,
    result: &ExperimentResult,
) -> Result<(), CliError> {
    write_text(&out.join("rows.csv"), &eval::result_csv(result))?;
    write_text(
        &out.join("summary.json"),
        &eval::summary_json(result, config_json(cfg)),
    )
}

fn print_aggregates(result: &ExperimentResult) {
    for a in eval::aggregate(result) {
        println!(
            "{} at {}: mean sum rate {:.4}, normalized {:.4} ({} samples)",
            a.algorithm, a.parameter, a.mean_sum_rate, a.mean_normalized, a.samples
        );
    }
}

/// One line series per algorithm over the sweep parameter, aggregated.
fn aggregate_series(result: &ExperimentResult, pick: fn(&eval::Aggregate) -> f64) -> Vec<Series> {
    let aggs = eval::aggregate(result);
    let mut names: Vec<String> = Vec::new();
    for a in &aggs {
        if !names.contains(&a.algorithm) {
            names.push(a.algorithm.clone());
        }
    }
    names
        .into_iter()
        .map(|name| Series {
            points: aggs
                .iter()
                .filter(|a| a.algorithm == name)
                .map(|a| (a.parameter, pick(a)))
                .collect(),
            name,
        })
        .collect()
}

fn run_compare(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let testset = sampler.sample_many(0, cfg.eval.samples);
    let fading = eval::fading_label(cfg.eval.fading);
    let result =
        eval::compare_algorithms(&testset, &cfg.network, params, cfg.train.k_infer, &fading)?;
    write_result(out, cfg, &result)?;
    let bins = eval::histogram(&result, cfg.eval.bins);
    write_text(&out.join("histogram.csv"), &histogram_csv(&bins))?;
    write_text(&out.join("plot.svg"), &histogram_svg(&bins))?;
    print_aggregates(&result);
    Ok(())
}

fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut csv = String::from("algorithm,lo,hi,count\n");
    for b in bins {
        csv.push_str(&format!("{},{},{},{}\n", b.algorithm, b.lo, b.hi, b.count));
    }
    csv
}

fn histogram_svg(bins: &[HistogramBin]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for b in bins {
        if !names.contains(&b.algorithm.as_str()) {
            names.push(&b.algorithm);
        }
    }
    // Every algorithm shares one bin grid; take the edges from the first.
    let edges: Vec<(f64, f64)> = match names.first() {
        Some(&first) => bins
            .iter()
            .filter(|b| b.algorithm == first)
            .map(|b| (b.lo, b.hi))
            .collect(),
        None => Vec::new(),
    };
    let series: Vec<Series> = names
        .iter()
        .map(|&name| Series {
            name: name.to_string(),
            points: bins
                .iter()
                .filter(|b| b.algorithm == name)
                .map(|b| ((b.lo + b.hi) / 2.0, b.count as f64))
                .collect(),
        })
        .collect();
    plots::bar_chart(
        "sum-rate distribution",
        "sum rate (bits per channel use)",
        "samples",
        &edges,
        &series,
    )
}

fn run_generalize(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let result = eval::generalization_sweep(
        params,
        &cfg.eval.sizes,
        sampler,
        cfg.eval.sweep_samples,
        cfg.train.k_infer,
    )?;
    write_result(out, cfg, &result)?;
    write_text(
        &out.join("plot.svg"),
        &plots::line_chart(
            "generalization across network sizes",
            "transceiver pairs",
            "sum rate relative to the full solver",
            &aggregate_series(&result, |a| a.mean_normalized),
        ),
    )?;
    print_aggregates(&result);
    Ok(())
}

fn run_spatial(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let result = eval::spatial_generalization(
        params,
        &cfg.eval.stddevs,
        sampler,
        cfg.eval.sweep_samples,
        cfg.train.k_infer,
    )?;
    write_result(out, cfg, &result)?;
    write_text(
        &out.join("plot.svg"),
        &plots::line_chart(
            "generalization across placement spreads",
            "placement stddev (m)",
            "mean sum rate",
            &aggregate_series(&result, |a| a.mean_sum_rate),
        ),
    )?;
    print_aggregates(&result);
    Ok(())
}

fn run_convergence(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let testset = sampler.sample_many(0, cfg.eval.sweep_samples);
    let curves = eval::convergence_f1(
        params,
        &testset,
        &cfg.network,
        cfg.train.k_infer,
        &cfg.eval.wmmse_iters,
        cfg.eval.w_threshold,
        cfg.eval.p_threshold,
    )?;

    let mut csv = String::from("algorithm,depth,f1\n");
    for &(k, f1) in &curves.uwmmse {
        csv.push_str(&format!("uwmmse,{k},{f1}\n"));
    }
    for &(n, f1) in &curves.wmmse {
        csv.push_str(&format!("wmmse,{n},{f1}\n"));
    }
    write_text(&out.join("f1.csv"), &csv)?;

    let to_series = |name: &str, pts: &[(usize, f64)]| Series {
        name: name.to_string(),
        points: pts.iter().map(|&(k, f1)| (k as f64, f1)).collect(),
    };
    write_text(
        &out.join("plot.svg"),
        &plots::line_chart(
            "convergence of the active-set prediction",
            "layers / solver iterations",
            "F1 score",
            &[
                to_series("uwmmse", &curves.uwmmse),
                to_series("wmmse", &curves.wmmse),
            ],
        ),
    )?;

    let doc = json!({
        "experiment": "convergence",
        "config": config_json(cfg),
        "w_threshold": curves.w_threshold,
        "p_threshold": curves.p_threshold,
        "uwmmse": curves.uwmmse,
        "wmmse": curves.wmmse,
    });
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&doc).expect("json serialization"),
    )?;

    if let (Some(&(k, fu)), Some(&(n, fw))) = (curves.uwmmse.last(), curves.wmmse.last()) {
        println!("final F1: uwmmse {fu:.4} at {k} layers, wmmse {fw:.4} at {n} iterations");
    }
    Ok(())
}

fn run_robustness(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let testset = sampler.sample_many(0, cfg.eval.sweep_samples);
    let fading = eval::fading_label(cfg.eval.fading);
    let result = eval::robustness_sweep(
        params,
        &cfg.eval.rates,
        cfg.eval.sigma_r,
        &testset,
        &cfg.network,
        cfg.train.k_infer,
        &fading,
        cfg.seed,
    )?;
    write_result(out, cfg, &result)?;
    write_text(
        &out.join("plot.svg"),
        &plots::line_chart(
            "robustness to CSI distortion",
            "distortion rate",
            "sum rate relative to the clean full solver",
            &aggregate_series(&result, |a| a.mean_normalized),
        ),
    )?;
    print_aggregates(&result);
    Ok(())
}

fn run_timing(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let testset = sampler.sample_many(0, cfg.eval.samples);
    let t = eval::timing_benchmark(&testset, &cfg.network, params, cfg.train.k_infer)?;
    let doc = json!({
        "experiment": "timing",
        "config": config_json(cfg),
        "samples": t.samples,
        "wmmse_secs": t.wmmse_secs,
        "tr_wmmse_secs": t.tr_wmmse_secs,
        "uwmmse_secs": t.uwmmse_secs,
    });
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&doc).expect("json serialization"),
    )?;
    println!(
        "per-sample seconds over {} samples: wmmse{} {:.6}, trwmmse{} {:.6}, uwmmse{} {:.6} ({:.1}x speedup)",
        t.samples,
        eval::WMMSE_ITERS,
        t.wmmse_secs,
        eval::TR_WMMSE_ITERS,
        t.tr_wmmse_secs,
        cfg.train.k_infer,
        t.uwmmse_secs,
        t.wmmse_secs / t.uwmmse_secs
    );
    Ok(())
}

fn run_equivariance(
    out: &Path,
    cfg: &RunConfig,
    sampler: &ChannelSampler,
    params: &ModelParams,
) -> Result<(), CliError> {
    let worst = eval::equivariance_test(
        params,
        sampler,
        cfg.eval.trials,
        cfg.train.k_infer,
        cfg.seed,
    )?;
    let doc = json!({
        "experiment": "equivariance",
        "config": config_json(cfg),
        "trials": cfg.eval.trials,
        "max_relative_deviation": worst,
    });
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&doc).expect("json serialization"),
    )?;
    println!(
        "max relative deviation over {} permutation trials: {worst:.3e}",
        cfg.eval.trials
    );
    Ok(())
}

fn run_gradcheck(out: &Path, cfg: &RunConfig, sampler: &ChannelSampler) -> Result<(), CliError> {
    let batch = sampler.sample_many(0, 2);
    let program = BatchSumRateLoss {
        batch: &batch,
        config: &cfg.network,
        hyper: cfg.hyper,
        layers: cfg.train.k_train,
    };
    let options = CheckOptions {
        max_coords: Some(50),
        seed: seed::derive(cfg.seed, "gradcheck-coords"),
    };
    let mut inits = Vec::new();
    for i in 0..3u64 {
        let params = ModelParams::init(
            &cfg.network,
            cfg.hyper,
            seed::derive_indexed(cfg.seed, "gradcheck-init", i),
        );
        let report = check_gradients(&program, &[], &params.to_blocks(), 1e-6, options)?;
        let pass = report.pass_fraction(1e-4);
        println!(
            "init {i}: loss {:.6}, pass fraction {:.2} of {} coords, max rel err {:.3e}",
            report.loss,
            pass,
            report.coords.len(),
            report.max_rel_err
        );
        inits.push(json!({
            "init": i,
            "loss": report.loss,
            "coords": report.coords.len(),
            "pass_fraction": pass,
            "max_rel_err": report.max_rel_err,
            "mean_rel_err": report.mean_rel_err,
        }));
    }
    let doc = json!({
        "experiment": "gradcheck",
        "config": config_json(cfg),
        "inits": inits,
    });
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&doc).expect("json serialization"),
    )
}
