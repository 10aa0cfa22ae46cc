//! Command-line entry points wiring data, training, selection, and
//! evaluation into reproducible runs. Every command writes a manifest
//! listing its artifacts and echoing the resolved configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use crate::config::{load_config, resolve, Overrides, ResolvedConfig};
use crate::data::{load_csv, Dataset, LabelColumn};
use crate::error::{Error, Result};
use crate::evaluation::{
    mu_grid_analysis, protocol_experiment1, protocol_experiment2, write_heatmap_csv,
    write_protocol_csv, ProtocolResult,
};
use crate::numerics::{Rng, Standardizer};
use crate::selection::{
    apply_elbow, jaccard_stability, pairwise_jaccard, rank_features, top_k, write_ranking_csv,
    write_sparsity_curve_csv, FeatureRanking,
};
use crate::trainer::{train, Mode, TrainConfig, TrainState};

pub const OUT_DIR_ENV: &str = "SABCE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "sabce",
    version,
    about = "Feature selection with sparse adaptive bottleneck centroid-encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes checkpoint, loss history, ranking, manifest.
    Train(TrainArgs),
    /// Rank features from a checkpoint and apply the elbow cut-off.
    Select(SelectArgs),
    /// Run a benchmark protocol end to end.
    Evaluate(EvaluateArgs),
    /// Sweep a μ grid (heatmap) or λ lists (sparsity curves).
    Sweep(SweepArgs),
    /// Multiple reseeded runs; reports selected-set overlap and Jaccard.
    Stability(StabilityArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// CSV file with a header row and one label column.
    #[arg(long)]
    pub data: PathBuf,
    /// Label column name or zero-based index.
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Mean-impute empty cells instead of rejecting them.
    #[arg(long)]
    pub impute_missing: bool,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// TOML config file with topology and hyperparameters.
    #[arg(long)]
    pub config: PathBuf,
    /// Model variant to train.
    #[arg(long, value_parser = Mode::parse)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Output directory; falls back to $SABCE_OUT_DIR, then ".".
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Rescale both elbow axes to [0,1] before the distance computation.
    #[arg(long)]
    pub normalized_elbow: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Protocol: exp1 (50:50 × repeats) or exp2 (70:10:20).
    #[arg(long, default_value = "exp2")]
    pub protocol: String,
    /// Comma-separated feature counts (exp1 may take several).
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// μ₁ values, comma-separated (heatmap sweep; needs --grid-mu2).
    #[arg(long)]
    pub grid_mu1: Option<String>,
    /// μ₂ values, comma-separated.
    #[arg(long)]
    pub grid_mu2: Option<String>,
    /// λ₁ values, comma-separated (one sparsity curve per value).
    #[arg(long)]
    pub lambda1_list: Option<String>,
    /// λ₂ values, comma-separated (one sparsity curve per value).
    #[arg(long)]
    pub lambda2_list: Option<String>,
    /// Bottleneck width for the μ heatmap.
    #[arg(long, default_value_t = 2)]
    pub bottleneck: usize,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of reseeded runs (≥ 2).
    #[arg(long)]
    pub runs: usize,
}

/// Run record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub resolved_config: serde_json::Value,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

fn out_dir(choice: &Option<PathBuf>) -> PathBuf {
    choice
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn parse_f64_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    let values: Result<Vec<f64>> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{flag}: '{t}' is not a number")))
        })
        .collect();
    let values = values?;
    if values.is_empty() {
        return Err(Error::Config(format!("{flag}: empty list")));
    }
    Ok(values)
}

fn parse_usize_list(s: &str, flag: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{flag}: '{t}' is not a count")))
        })
        .collect()
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let label = LabelColumn::parse(&args.label_column);
    load_csv(&args.data, &label, args.impute_missing)
}

fn resolve_common(args: &CommonArgs, input_dim: usize) -> Result<ResolvedConfig> {
    let file = load_config(&args.config)?;
    let overrides = Overrides {
        mode: args.mode,
        seed: args.seed,
        mu1: args.mu1,
        mu2: args.mu2,
        lambda1: args.lambda1,
        lambda2: args.lambda2,
    };
    resolve(&file, &overrides, input_dim)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config_path: Option<&Path>,
    resolved: &impl Serialize,
    seed: u64,
    artifacts: &[PathBuf],
    started: Instant,
) -> Result<PathBuf> {
    let manifest = RunManifest {
        command: command.to_string(),
        config_path: config_path.map(|p| p.display().to_string()),
        resolved_config: serde_json::to_value(resolved)?,
        seed,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Select(args) => cmd_select(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Stability(args) => cmd_stability(&args),
    }
}

/// Standardizes (fit on the given data), trains, and builds the checkpoint.
fn train_on(
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(crate::trainer::TrainReport, Standardizer, Dataset)> {
    let scaler = Standardizer::fit(&ds.x)?;
    let standardized = ds.with_x(scaler.apply(&ds.x)?)?;
    let report = train(&standardized, cfg)?;
    Ok((report, scaler, standardized))
}

fn checkpoint_from(
    cfg: &TrainConfig,
    state: TrainState,
    ds: &Dataset,
    scaler: Option<Standardizer>,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        topology: cfg.topology.clone(),
        mode: cfg.mode,
        loss: cfg.loss,
        learning_rate: cfg.learning_rate,
        phase_epochs: cfg.phase_epochs,
        seed: cfg.seed,
        state,
        feature_names: ds.feature_names.clone(),
        class_names: ds.class_names.clone(),
        standardizer: scaler,
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let dir = out_dir(&args.common.out_dir);
    std::fs::create_dir_all(&dir)?;
    let ds = load_dataset(&args.data)?;
    let resolved = resolve_common(&args.common, ds.d())?;
    let cfg = &resolved.train;

    let (report, scaler, _) = match train_on(&ds, cfg) {
        Ok(ok) => ok,
        Err(Error::Diverged { epoch, last_state }) => {
            // Preserve the last finite snapshot so sweeps and restarts can
            // pick up from it.
            if let Some(state) = last_state {
                let rescue = dir.join("rescue_checkpoint.json");
                save_checkpoint(&checkpoint_from(cfg, *state, &ds, None), &rescue)?;
                eprintln!(
                    "training diverged at epoch {epoch}; last finite state written to {}",
                    rescue.display()
                );
            }
            return Err(Error::Diverged {
                epoch,
                last_state: None,
            });
        }
        Err(e) => return Err(e),
    };

    let ranked = rank_features(&report.params, &ds.feature_names)?;
    let ranking = apply_elbow(&ranked, false)?;

    let ck_path = dir.join("checkpoint.json");
    save_checkpoint(
        &checkpoint_from(cfg, report.state.clone(), &ds, Some(scaler)),
        &ck_path,
    )?;
    let history_path = dir.join("loss_history.csv");
    crate::trainer::write_history_csv(&report.history, 0, &history_path)?;
    let ranking_path = dir.join("ranking.csv");
    write_ranking_csv(&ranking, &ds.feature_names, &ranking_path)?;

    let artifacts = vec![ck_path, history_path, ranking_path];
    write_manifest(
        &dir,
        "train",
        Some(&args.common.config),
        &resolved,
        cfg.seed,
        &artifacts,
        started,
    )?;
    println!(
        "trained {} for {} epochs: {} of {} features selected (elbow at rank {})",
        cfg.mode,
        report.history.len(),
        ranking.selected.len(),
        ds.d(),
        ranking.elbow_index
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ElbowReport {
    elbow_index: usize,
    magnitude_at_elbow: f64,
    selected_count: usize,
    total_features: usize,
    collinear_fallback: bool,
    normalized_axes: bool,
}

pub fn cmd_select(args: &SelectArgs) -> Result<()> {
    let started = Instant::now();
    let dir = out_dir(&args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let ranked = rank_features(&ck.state.params, &ck.feature_names)?;
    let ranking = apply_elbow(&ranked, args.normalized_elbow)?;

    let ranking_path = dir.join("ranking.csv");
    write_ranking_csv(&ranking, &ck.feature_names, &ranking_path)?;
    let curve_path = dir.join("sparsity_curve.csv");
    write_sparsity_curve_csv(&ranking.magnitudes, &curve_path)?;
    let report = ElbowReport {
        elbow_index: ranking.elbow_index,
        magnitude_at_elbow: ranking.magnitudes[ranking.elbow_index],
        selected_count: ranking.selected.len(),
        total_features: ck.feature_names.len(),
        collinear_fallback: ranking.collinear_fallback,
        normalized_axes: args.normalized_elbow,
    };
    let report_path = dir.join("elbow_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let artifacts = vec![ranking_path, curve_path, report_path];
    write_manifest(&dir, "select", None, &ck, ck.seed, &artifacts, started)?;
    println!(
        "selected {} of {} features (elbow at rank {})",
        report.selected_count, report.total_features, report.elbow_index
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let dir = out_dir(&args.common.out_dir);
    std::fs::create_dir_all(&dir)?;
    let ds = load_dataset(&args.data)?;
    let resolved = resolve_common(&args.common, ds.d())?;
    let opts = resolved.protocol_options();
    let results: Vec<ProtocolResult> = match args.protocol.as_str() {
        "exp1" => {
            let ks = match &args.k {
                Some(s) => parse_usize_list(s, "--k")?,
                None => vec![10, 50],
            };
            protocol_experiment1(&ds, &resolved.train, &ks, args.repeats, &opts)?
        }
        "exp2" => {
            let k = match &args.k {
                Some(s) => *parse_usize_list(s, "--k")?
                    .first()
                    .ok_or_else(|| Error::Config("--k: empty list".into()))?,
                None => 50,
            };
            vec![protocol_experiment2(
                &ds,
                &resolved.train,
                k,
                args.repeats,
                &opts,
            )?]
        }
        other => {
            return Err(Error::Config(format!(
                "unknown protocol '{other}' (expected exp1 or exp2)"
            )))
        }
    };

    let json_path = dir.join("evaluation_report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&results)?)?;
    let csv_path = dir.join("evaluation_report.csv");
    write_protocol_csv(&results, &csv_path)?;
    let artifacts = vec![json_path, csv_path];
    write_manifest(
        &dir,
        "evaluate",
        Some(&args.common.config),
        &resolved,
        resolved.train.seed,
        &artifacts,
        started,
    )?;
    for r in &results {
        println!(
            "{} k={}: mean accuracy {:.4} (sd {:.4}) over {} repeats",
            r.protocol,
            r.k,
            r.mean,
            r.std_dev,
            r.accuracies.len()
        );
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let started = Instant::now();
    let dir = out_dir(&args.common.out_dir);
    std::fs::create_dir_all(&dir)?;
    let ds = load_dataset(&args.data)?;
    let resolved = resolve_common(&args.common, ds.d())?;
    let mut artifacts = Vec::new();

    match (&args.grid_mu1, &args.grid_mu2) {
        (Some(m1), Some(m2)) => {
            let mu1_grid = parse_f64_list(m1, "--grid-mu1")?;
            let mu2_grid = parse_f64_list(m2, "--grid-mu2")?;
            let errors =
                mu_grid_analysis(&ds, &mu1_grid, &mu2_grid, &resolved.train, args.bottleneck)?;
            let path = dir.join("mu_grid_heatmap.csv");
            write_heatmap_csv(&mu1_grid, &mu2_grid, &errors, &path)?;
            artifacts.push(path);
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "--grid-mu1 and --grid-mu2 must be given together".into(),
            ))
        }
    }

    // λ sweeps: retrain per value, one sparsity curve per file, plus a
    // summary of near-zero counts. Divergent cells are recorded, not fatal.
    let mut summary: Vec<(String, f64, Option<usize>)> = Vec::new();
    let mut sweep_lambda = |which: &str, values: &[f64]| -> Result<()> {
        for &v in values {
            let mut cfg = resolved.train.clone();
            match which {
                "lambda1" => cfg.loss.lambda1 = v,
                _ => cfg.loss.lambda2 = v,
            }
            match train_on(&ds, &cfg) {
                Ok((report, _, _)) => {
                    let ranked = rank_features(&report.params, &ds.feature_names)?;
                    let path = dir.join(format!("sparsity_curve_{which}_{v}.csv"));
                    write_sparsity_curve_csv(&ranked.magnitudes, &path)?;
                    artifacts.push(path);
                    let near_zero = report.params.spl.iter().filter(|w| w.abs() < 1e-4).count();
                    summary.push((which.to_string(), v, Some(near_zero)));
                }
                Err(Error::Diverged { epoch, .. }) => {
                    eprintln!("{which}={v}: diverged at epoch {epoch}, skipping cell");
                    summary.push((which.to_string(), v, None));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    };
    if let Some(list) = &args.lambda1_list {
        sweep_lambda("lambda1", &parse_f64_list(list, "--lambda1-list")?)?;
    }
    if let Some(list) = &args.lambda2_list {
        sweep_lambda("lambda2", &parse_f64_list(list, "--lambda2-list")?)?;
    }
    if !summary.is_empty() {
        let path = dir.join("lambda_sweep_summary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["parameter", "value", "near_zero_count"])?;
        for (which, v, count) in &summary {
            w.write_record([
                which.clone(),
                v.to_string(),
                count.map_or_else(|| "diverged".to_string(), |c| c.to_string()),
            ])?;
        }
        w.flush()?;
        artifacts.push(path);
    }

    if artifacts.is_empty() {
        return Err(Error::Config(
            "sweep needs --grid-mu1/--grid-mu2 or a λ list".into(),
        ));
    }
    write_manifest(
        &dir,
        "sweep",
        Some(&args.common.config),
        &resolved,
        resolved.train.seed,
        &artifacts,
        started,
    )?;
    println!("sweep wrote {} artifact(s)", artifacts.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct StabilityReport {
    runs: usize,
    seeds: Vec<u64>,
    selected_counts: Vec<usize>,
    multiway_jaccard: f64,
    pairwise_jaccard: Vec<Vec<f64>>,
    top_10_overlap: usize,
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let started = Instant::now();
    if args.runs < 2 {
        return Err(Error::Config(format!(
            "stability needs >= 2 runs, got {}",
            args.runs
        )));
    }
    let dir = out_dir(&args.common.out_dir);
    std::fs::create_dir_all(&dir)?;
    let ds = load_dataset(&args.data)?;
    let resolved = resolve_common(&args.common, ds.d())?;

    let mut selected_sets: Vec<Vec<usize>> = Vec::with_capacity(args.runs);
    let mut top10_sets: Vec<Vec<usize>> = Vec::with_capacity(args.runs);
    let mut seeds = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let mut cfg = resolved.train.clone();
        cfg.seed = Rng::derive(resolved.train.seed, run as u64);
        seeds.push(cfg.seed);
        let (report, _, _) = train_on(&ds, &cfg)?;
        let ranked = rank_features(&report.params, &ds.feature_names)?;
        let ranking: FeatureRanking = apply_elbow(&ranked, false)?;
        top10_sets.push(top_k(&ranked, 10.min(ds.d()))?);
        selected_sets.push(ranking.selected);
    }

    let multiway = jaccard_stability(&selected_sets)?;
    let pairwise = pairwise_jaccard(&selected_sets);
    let top10_overlap = {
        let mut inter: std::collections::BTreeSet<usize> =
            top10_sets[0].iter().copied().collect();
        for s in &top10_sets[1..] {
            let other: std::collections::BTreeSet<usize> = s.iter().copied().collect();
            inter = inter.intersection(&other).copied().collect();
        }
        inter.len()
    };

    let report = StabilityReport {
        runs: args.runs,
        seeds: seeds.clone(),
        selected_counts: selected_sets.iter().map(|s| s.len()).collect(),
        multiway_jaccard: multiway,
        pairwise_jaccard: pairwise.clone(),
        top_10_overlap: top10_overlap,
    };
    let json_path = dir.join("stability_report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    let csv_path = dir.join("pairwise_overlap.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header = vec!["run".to_string()];
        header.extend((0..args.runs).map(|i| format!("run{i}")));
        w.write_record(&header)?;
        for (i, row) in pairwise.iter().enumerate() {
            let mut rec = vec![format!("run{i}")];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    let artifacts = vec![json_path, csv_path];
    write_manifest(
        &dir,
        "stability",
        Some(&args.common.config),
        &resolved,
        resolved.train.seed,
        &artifacts,
        started,
    )?;
    println!(
        "stability over {} runs: multiway Jaccard {:.4}, top-10 overlap {}",
        args.runs, multiway, top10_overlap
    );
    Ok(())
}
