//! Command-line front end: reproducible training runs, evaluation of saved
//! checkpoints, hyperparameter sweeps, and the gradient-check gateway.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 runtime/numeric error.
//! `gradcheck` exits 1 when the check itself fails.

mod config;

pub use config::{parse_synthetic_spec, DataSource, RunConfig, SyntheticSpec};

use crate::data::synthetic::{first_order, planted};
use crate::data::{parse_tsv, split, stratified_sample, to_tsv_line, FeatureVocab, Record, Schema};
use crate::error::{CtrError, Result};
use crate::model::{checkpoint, grad_check, tiny_batch, tiny_config};
use crate::trainer::{
    auc_trend, evaluate, fit, metrics_csv, sweep, sweep_csv, EpochReport, SweepParam,
};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "ctr-forge", version, about = "CTR model trainer and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a Criteo-format TSV or a synthetic generator.
    Train(TrainArgs),
    /// Evaluate a saved run's checkpoint on a TSV.
    Eval(EvalArgs),
    /// Grid-sweep one hyperparameter, one trained model per value.
    Sweep(SweepArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone)]
struct CommonTrainArgs {
    /// Criteo-format TSV input.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic generator spec, e.g. `planted` or `planted:n=12500,noise_cat=4`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Flat `key = value` config file (a run manifest works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for manifest, metrics, checkpoints.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    /// Attention head count.
    #[arg(long)]
    heads: Option<usize>,
    /// Comma-separated CIN layer sizes, e.g. `128,128`.
    #[arg(long = "cin-layers")]
    cin_layers: Option<String>,
    /// Comma-separated DNN layer sizes, e.g. `256,128`.
    #[arg(long = "dnn-layers")]
    dnn_layers: Option<String>,
    /// Ablation preset: none, xdeepfm, or deepfm.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding checkpoint.best.ckpt and vocab.txt.
    #[arg(long)]
    out: PathBuf,
    /// TSV to score.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Which hyperparameter to sweep: lr, embed_dim, or num_heads.
    #[arg(long)]
    param: String,
    /// Comma-separated values, e.g. `0.5,0.1,0.08`.
    #[arg(long)]
    values: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Test hook: corrupt one analytic gradient so the check must fail.
    #[arg(long)]
    corrupt: bool,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(&args).map(|_| 0),
        Command::Eval(args) => cmd_eval(&args).map(|_| 0),
        Command::Sweep(args) => cmd_sweep(&args).map(|_| 0),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(common: &CommonTrainArgs) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)?;
        run.apply_text(&text)?;
    }
    if let Some(seed) = common.seed {
        run.set("seed", &seed.to_string())?;
    }
    if let Some(lr) = common.lr {
        run.set("lr", &lr.to_string())?;
    }
    if let Some(epochs) = common.epochs {
        run.set("epochs", &epochs.to_string())?;
    }
    if let Some(d) = common.embed_dim {
        run.set("embed_dim", &d.to_string())?;
    }
    if let Some(h) = common.heads {
        run.set("num_heads", &h.to_string())?;
    }
    if let Some(v) = &common.cin_layers {
        run.set("cin_layers", v)?;
    }
    if let Some(v) = &common.dnn_layers {
        run.set("dnn_layers", v)?;
    }
    if let Some(v) = &common.ablation {
        run.set("ablation", v)?;
    }
    match (&common.data, &common.synthetic) {
        (Some(_), Some(_)) => {
            return Err(CtrError::Arg("--data and --synthetic are exclusive".into()))
        }
        (Some(p), None) => run.source = Some(DataSource::File(p.display().to_string())),
        (None, Some(s)) => run.source = Some(DataSource::Synthetic(s.clone())),
        (None, None) => {}
    }
    if run.source.is_none() {
        return Err(CtrError::Arg(
            "no input: pass --data <tsv> or --synthetic <spec>".into(),
        ));
    }
    Ok(run)
}

/// Loads records per the resolved source. Returns the records, their schema,
/// and a content checksum for the manifest.
fn load_records(run: &RunConfig) -> Result<(Vec<Record>, Schema, String)> {
    match run.source.as_ref().expect("source resolved") {
        DataSource::File(path) => {
            let path = Path::new(path);
            if !path.exists() {
                return Err(CtrError::Arg(format!(
                    "data file `{}` does not exist",
                    path.display()
                )));
            }
            let bytes = fs::read(path)?;
            let checksum = hex_digest(&bytes);
            let schema = Schema::new(run.n_dense, run.n_cat);
            let reader = BufReader::new(&bytes[..]);
            let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
            let (records, stats) = parse_tsv(lines.iter(), &schema)?;
            if stats.skipped > 0 {
                eprintln!("note: skipped {} malformed lines", stats.skipped);
            }
            Ok((records, schema, checksum))
        }
        DataSource::Synthetic(spec) => {
            let parsed = parse_synthetic_spec(spec)?;
            let (records, schema) = match parsed {
                SyntheticSpec::Planted(cfg) => {
                    let recs = planted(&cfg);
                    let schema = cfg.schema();
                    (recs, schema)
                }
                SyntheticSpec::FirstOrder { n, vocab, seed } => {
                    (first_order(n, vocab, seed), Schema::new(0, 2))
                }
            };
            let serialized: String = records.iter().map(|r| to_tsv_line(r) + "\n").collect();
            let checksum = hex_digest(serialized.as_bytes());
            Ok((records, schema, checksum))
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(
    dir: &Path,
    run: &RunConfig,
    checksum: &str,
    started: u64,
    finished: u64,
) -> Result<()> {
    let mut text = String::new();
    text.push_str("# ctr-forge run manifest (also a valid --config file)\n");
    text.push_str(&format!("# tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("# data_sha256 = {checksum}\n"));
    text.push_str(&format!("# started_unix = {started}\n"));
    text.push_str(&format!("# finished_unix = {finished}\n"));
    text.push_str(&run.render());
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

fn print_epoch(r: &EpochReport) {
    println!(
        "epoch {:>3} train_logloss={:.6} eval_auc={:.6} eval_logloss={:.6} lr={} {:.2}s",
        r.epoch, r.train_logloss, r.eval_auc, r.eval_logloss, r.lr, r.seconds
    );
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = resolve_config(&args.common)?;
    let started = unix_now();
    let (mut records, schema, checksum) = load_records(&run)?;
    if let Some(n) = run.train.sample_n {
        records = stratified_sample(&records, n, run.train.seed)?;
    }
    let (train_recs, test_recs) = split(&records, run.train.split_ratio, run.train.seed);
    println!(
        "{} records -> {} train / {} test ({} fields)",
        records.len(),
        train_recs.len(),
        test_recs.len(),
        schema.n_fields()
    );

    let outcome = fit(
        &train_recs,
        &test_recs,
        &schema,
        &run.train,
        &mut print_epoch,
    )?;

    let dir = &args.common.out;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&outcome.reports))?;
    checkpoint::save_to_path(&outcome.best, &dir.join("checkpoint.best.ckpt"))?;
    checkpoint::save_to_path(&outcome.last, &dir.join("checkpoint.final.ckpt"))?;
    {
        let mut vocab_file = fs::File::create(dir.join("vocab.txt"))?;
        outcome.vocab.save(&mut vocab_file)?;
    }
    {
        let test_tsv: String = test_recs.iter().map(|r| to_tsv_line(r) + "\n").collect();
        fs::write(dir.join("test.tsv"), test_tsv)?;
    }
    write_manifest(dir, &run, &checksum, started, unix_now())?;

    match outcome.best_epoch {
        Some(e) => {
            let best = &outcome.reports[e];
            println!("best epoch {e}");
            println!("auc={} logloss={}", best.eval_auc, best.eval_logloss);
        }
        None => println!("no epochs ran"),
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if !args.data.exists() {
        return Err(CtrError::Arg(format!(
            "data file `{}` does not exist",
            args.data.display()
        )));
    }
    let (auc, logloss) = eval_checkpoint(&args.out, &args.data)?;
    println!("auc={auc} logloss={logloss}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let run = resolve_config(&args.common)?;
    let param = SweepParam::parse(&args.param)?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CtrError::Arg(format!("bad sweep value `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut records, schema, _) = load_records(&run)?;
    if let Some(n) = run.train.sample_n {
        records = stratified_sample(&records, n, run.train.seed)?;
    }
    let (train_recs, test_recs) = split(&records, run.train.split_ratio, run.train.seed);

    let rows = sweep(
        param,
        &values,
        &run.train,
        &train_recs,
        &test_recs,
        &schema,
        &mut |_| {},
    )?;

    let dir = &args.common.out;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    for r in &rows {
        println!(
            "{}={} best_auc={} best_logloss={} epochs_run={}",
            r.param, r.value, r.best_auc, r.best_logloss, r.epochs_run
        );
    }
    println!("auc trend across values: {}", auc_trend(&rows));
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let (config, vocab_sizes) = tiny_config();
    let batch = tiny_batch();
    let report = grad_check(
        &config,
        &vocab_sizes,
        &batch,
        args.h,
        args.tol,
        args.corrupt,
    )?;
    print!("{}", report.render());
    Ok(if report.passed() { 0 } else { 1 })
}

/// Loads a run directory's best checkpoint and vocabulary, scores a TSV,
/// and returns (AUC, Logloss).
pub fn eval_checkpoint(run_dir: &Path, data: &Path) -> Result<(f64, f64)> {
    let params = checkpoint::load_from_path(&run_dir.join("checkpoint.best.ckpt"))?;
    let schema = Schema::new(params.config.n_dense_fields, params.config.n_cat_fields);
    let vocab = {
        let file = fs::File::open(run_dir.join("vocab.txt"))?;
        FeatureVocab::load(&mut BufReader::new(file), schema.n_cat)?
    };
    let lines: Vec<String> = BufReader::new(fs::File::open(data)?)
        .lines()
        .collect::<std::io::Result<_>>()?;
    let (records, _) = parse_tsv(lines.iter(), &schema)?;
    evaluate(&records, &schema, &vocab, &params, 4096)
}
