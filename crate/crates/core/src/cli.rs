//! Command surface: generate data, inject noise, train any method,
//! evaluate artifacts, and sweep over noise grids.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime divergence,
//! 3 IO/parse error. Progress goes to stderr; machine-readable results go
//! to files.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use labelnoise::data::{generate_mixture, split_dataset, LabeledDataset, MixtureSpec, Split};
use labelnoise::estimators::SgdConfig;
use labelnoise::experiment::{
    append_record, read_records, run_method, Method, RunSettings,
};
use labelnoise::io::{
    read_checkpoint, read_dataset_csv, read_transition_csv, write_checkpoint, write_dataset_csv,
    write_toml, write_transition_csv,
};
use labelnoise::meta::{HypergradMode, InitSource, MlpConfig, TrainConfig};
use labelnoise::metrics::{
    accuracy, estimation_error, frobenius_norms, input_norm_bound, rademacher_bound, BoundInputs,
};
use labelnoise::mlp::predict;
use labelnoise::objective::CE_EPS;
use labelnoise::transition::NoiseSpec;
use labelnoise::{Error, Matrix, Result, SeededRng};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LABELNOISE_OUT";

// rng stream ids for dataset construction, disjoint from the training
// streams inside the library
const STREAM_GENERATE: u64 = 100;
const STREAM_SPLIT: u64 = 101;
const STREAM_CORRUPT: u64 = 102;

#[derive(Parser)]
#[command(
    name = "labelnoise",
    about = "Train classifiers under label noise and estimate the noise transition matrix",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a Gaussian-mixture dataset with train/meta/test split tags.
    Generate(GenerateArgs),
    /// Corrupt the training-split labels of a dataset file.
    Corrupt(CorruptArgs),
    /// Train one method end to end and record the result.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a grid of (method, noise, rate, seed) cells from a manifest.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of classes; means sit on a circle around the origin.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Samples per class.
    #[arg(long)]
    pub per_class: usize,
    /// Circle radius for the class means.
    #[arg(long, default_value_t = 2.5)]
    pub radius: f64,
    /// Isotropic standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train split size; defaults to the rows left after meta and test.
    #[arg(long)]
    pub train: Option<usize>,
    /// Meta (small clean) split size; defaults to 1% of the total.
    #[arg(long)]
    pub meta: Option<usize>,
    /// Test split size; defaults to a third of the total.
    #[arg(long)]
    pub test: Option<usize>,
    /// Output dataset CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CorruptArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Noise kind: symmetric or pairs.
    #[arg(long)]
    pub kind: String,
    /// Flip rate (η for symmetric, r for pairs).
    #[arg(long)]
    pub rate: f64,
    /// Flip pairs for --kind pairs, e.g. "0:1,1:0".
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional path to save the ground-truth transition matrix CSV.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    /// Input dataset CSV (already corrupted for noisy-label methods).
    #[arg(long)]
    pub data: PathBuf,
    /// One of: ce, finetune, forward, glc, smodel, meta.
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth transition CSV; enables the estimation-error column.
    #[arg(long)]
    pub true_t: Option<PathBuf>,
    /// Noise-kind annotation for the record row.
    #[arg(long, default_value = "none")]
    pub noise_kind: String,
    /// Noise-rate annotation for the record row.
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
    /// Classifier step size α.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Meta step size β.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 64)]
    pub train_batch: usize,
    #[arg(long, default_value_t = 16)]
    pub meta_batch: usize,
    /// Meta-training iterations.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Transition init for the meta method: glc, forward, uniform, identity-ish.
    #[arg(long, default_value = "glc")]
    pub init: String,
    /// Hypergradient mode: exact or fd-trick.
    #[arg(long, default_value = "exact")]
    pub hypergrad: String,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "32,32")]
    pub hidden: String,
    #[arg(long, default_value_t = 0.5)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub ce_lr: f64,
    #[arg(long, default_value_t = 30)]
    pub ce_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub ce_batch: usize,
    /// Iterations for smodel and forward/glc second-stage retraining.
    #[arg(long, default_value_t = 1000)]
    pub smodel_iters: usize,
    /// Warm-start the forward/glc second stage from the CE model.
    #[arg(long, default_value_t = false)]
    pub warm_start: bool,
    #[arg(long, default_value_t = 200)]
    pub log_every: usize,
    /// Output directory; defaults to $LABELNOISE_OUT, then the cwd.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Results CSV path; defaults to <out-dir>/results.csv.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Estimated transition CSV (optional).
    #[arg(long)]
    pub transition: Option<PathBuf>,
    /// Ground-truth transition CSV (optional, with --transition).
    #[arg(long)]
    pub true_t: Option<PathBuf>,
    /// Write the metrics as key,value CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// TOML manifest describing the grid.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to $LABELNOISE_OUT, then the cwd.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Results CSV path; defaults to <out-dir>/results.csv.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

/// Grid manifest for `sweep`.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct SweepManifest {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub noise: Vec<NoiseGrid>,
    pub data: SweepData,
    #[serde(default)]
    pub settings: RunSettings,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct NoiseGrid {
    /// "symmetric" or "pairs".
    pub kind: String,
    pub rates: Vec<f64>,
    /// Flip pairs, required for kind = "pairs".
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct SweepData {
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub per_class: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_std")]
    pub std: f64,
    pub train: usize,
    pub meta: usize,
    pub test: usize,
}

fn default_classes() -> usize {
    3
}
fn default_radius() -> f64 {
    2.5
}
fn default_std() -> f64 {
    1.0
}

/// Class means on a circle around the origin; the 3-class case matches
/// MixtureSpec::reference.
pub fn circle_spec(classes: usize, per_class: usize, radius: f64, std: f64) -> MixtureSpec {
    let means = (0..classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            vec![radius * angle.cos(), radius * angle.sin()]
        })
        .collect();
    MixtureSpec {
        means,
        std,
        per_class,
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for part in s.split(',') {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| Error::invalid_config(format!("bad pair {part:?}, expected SRC:DST")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid_config(format!("bad class index {x:?}")))
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    Ok(pairs)
}

fn noise_spec(kind: &str, rate: f64, pairs: Option<&str>) -> Result<NoiseSpec> {
    match kind {
        "symmetric" => Ok(NoiseSpec::Symmetric { rate }),
        "pairs" => {
            let pairs = pairs
                .ok_or_else(|| Error::invalid_config("--kind pairs requires --pairs"))?;
            Ok(NoiseSpec::AsymmetricPairs {
                rate,
                pairs: parse_pairs(pairs)?,
            })
        }
        other => Err(Error::invalid_config(format!(
            "unknown noise kind {other:?}, expected symmetric or pairs"
        ))),
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if args.per_class == 0 {
        return Err(Error::invalid_config("--per-class must be at least 1"));
    }
    if args.classes < 2 {
        return Err(Error::invalid_config("--classes must be at least 2"));
    }
    let spec = circle_spec(args.classes, args.per_class, args.radius, args.std);
    let total = args.classes * args.per_class;
    // defaults stay multiples of the class count so stratification is exact
    let c = args.classes;
    let n_test = args.test.unwrap_or(total / 3 / c * c);
    let n_meta = args.meta.unwrap_or(total / 100 / c * c);
    let n_train = args
        .train
        .unwrap_or_else(|| total.saturating_sub(n_test + n_meta));
    let raw = generate_mixture(&spec, &mut SeededRng::derive(args.seed, STREAM_GENERATE))?;
    let tagged = split_dataset(
        &raw,
        n_train,
        n_meta,
        n_test,
        &mut SeededRng::derive(args.seed, STREAM_SPLIT),
    )?;
    write_dataset_csv(&tagged, &args.out)?;
    let meta_path = args.out.with_extension("toml");
    #[derive(serde::Serialize)]
    struct GenMeta<'a> {
        classes: usize,
        per_class: usize,
        radius: f64,
        std: f64,
        seed: u64,
        train: usize,
        meta: usize,
        test: usize,
        means: &'a Vec<Vec<f64>>,
    }
    write_toml(
        &GenMeta {
            classes: args.classes,
            per_class: args.per_class,
            radius: args.radius,
            std: args.std,
            seed: args.seed,
            train: n_train,
            meta: n_meta,
            test: n_test,
            means: &spec.means,
        },
        &meta_path,
    )?;
    eprintln!(
        "generated {} rows ({} train / {} meta / {} test)",
        tagged.len(),
        n_train,
        n_meta,
        n_test
    );
    println!("{}", args.out.display());
    Ok(())
}

pub fn cmd_corrupt(args: &CorruptArgs) -> Result<()> {
    let mut ds = read_dataset_csv(&args.data)?;
    let spec = noise_spec(&args.kind, args.rate, args.pairs.as_deref())?;
    let t = spec.build_matrix(ds.num_classes)?;
    let report = ds.corrupt_train_split(&t, &mut SeededRng::derive(args.seed, STREAM_CORRUPT))?;
    write_dataset_csv(&ds, &args.out)?;
    if let Some(path) = &args.matrix_out {
        write_transition_csv(&t, path)?;
    }
    eprintln!("empirical flip frequencies (train split):");
    for i in 0..report.empirical.rows() {
        let row: Vec<String> = report
            .empirical
            .row(i)
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect();
        eprintln!("  {}", row.join(" "));
    }
    println!("{}", args.out.display());
    Ok(())
}

pub fn settings_from_args(args: &TrainArgs) -> Result<RunSettings> {
    let hidden: Vec<usize> = args
        .hidden
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::invalid_config(format!("bad hidden width {s:?}")))
        })
        .collect::<Result<_>>()?;
    let init_source = match args.init.as_str() {
        "glc" => InitSource::Glc,
        "forward" => InitSource::Forward,
        "uniform" => InitSource::Uniform,
        "identity-ish" => InitSource::IdentityIsh,
        other => {
            return Err(Error::invalid_config(format!(
                "unknown init {other:?}, expected glc, forward, uniform, or identity-ish"
            )))
        }
    };
    let hypergrad_mode = match args.hypergrad.as_str() {
        "exact" => HypergradMode::Exact,
        "fd-trick" => HypergradMode::FdTrick,
        other => {
            return Err(Error::invalid_config(format!(
                "unknown hypergrad mode {other:?}, expected exact or fd-trick"
            )))
        }
    };
    let train = TrainConfig {
        alpha: args.alpha,
        beta: args.beta,
        train_batch: args.train_batch,
        meta_batch: args.meta_batch,
        iters: args.iters,
        seed: args.seed,
        init_source,
        hypergrad_mode,
        log_every: args.log_every,
    };
    train.validate()?;
    Ok(RunSettings {
        mlp: MlpConfig {
            hidden,
            init_scale: args.init_scale,
        },
        ce: SgdConfig {
            lr: args.ce_lr,
            epochs: args.ce_epochs,
            batch: args.ce_batch,
        },
        finetune: SgdConfig {
            lr: 0.02,
            epochs: 200,
            batch: 16,
        },
        train,
        smodel_iters: args.smodel_iters,
        warm_start: args.warm_start,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let method = Method::parse(&args.method).ok_or_else(|| {
        Error::invalid_config(format!(
            "unknown method {:?}, expected one of: {}",
            args.method,
            Method::ALL.map(|m| m.as_str()).join(", ")
        ))
    })?;
    let settings = settings_from_args(args)?;
    let ds = read_dataset_csv(&args.data)?;
    let true_t = args
        .true_t
        .as_deref()
        .map(read_transition_csv)
        .transpose()?;

    let dir = out_dir(&args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| dir.join("results.csv"));

    eprintln!(
        "training {method} on {} ({} rows, seed {})",
        args.data.display(),
        ds.len(),
        args.seed
    );
    let (record, artifacts) = run_method(
        &ds,
        method,
        &settings,
        args.seed,
        &args.noise_kind,
        args.rate,
        true_t.as_ref(),
    )?;

    let prefix = format!(
        "{}_{}_{}_{}",
        method, args.noise_kind, args.rate, args.seed
    );
    write_checkpoint(&artifacts.params, &dir.join(format!("{prefix}.ckpt")))?;
    if let Some(t_hat) = &artifacts.t_hat {
        write_transition_csv(t_hat, &dir.join(format!("{prefix}.that.csv")))?;
    }
    if let Some(trace) = &artifacts.trace {
        trace.write_csv(&dir.join(format!("{prefix}.trace.csv")))?;
    }
    write_toml(&settings, &dir.join(format!("{prefix}.config.toml")))?;
    append_record(&results, &record)?;
    eprintln!(
        "done: accuracy {:.4}{} ({:.1}s)",
        record.test_accuracy,
        record
            .estimation_error
            .map(|e| format!(", estimation error {e:.4}"))
            .unwrap_or_default(),
        record.wall_time_seconds
    );
    println!("{}", results.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ds = read_dataset_csv(&args.data)?;
    let params = read_checkpoint(&args.checkpoint)?;
    let test_idx = ds.indices_of(Split::Test);
    if test_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no test split"));
    }
    let preds = predict(&params, &ds.features_at(&test_idx))?;
    let acc = accuracy(&preds, &ds.clean_labels_at(&test_idx))?;

    let train_idx = ds.indices_of(Split::Train);
    let bound = rademacher_bound(&BoundInputs {
        input_norm: input_norm_bound(&ds.features_at(&train_idx)),
        depth: params.num_layers(),
        layer_norms: frobenius_norms(&params),
        train_size: train_idx.len(),
        classes: ds.num_classes,
        loss_bound: -CE_EPS.ln(),
        delta: 0.05,
    })?;

    let mut lines = vec![
        format!("test_accuracy,{}", labelnoise::io::fmt_f64(acc)),
        format!("bound_value,{}", labelnoise::io::fmt_f64(bound)),
    ];
    if let (Some(est_path), Some(true_path)) = (&args.transition, &args.true_t) {
        let t_hat = read_transition_csv(est_path)?;
        let t = read_transition_csv(true_path)?;
        lines.push(format!(
            "estimation_error,{}",
            labelnoise::io::fmt_f64(estimation_error(&t, &t_hat)?)
        ));
    }
    let body = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

/// Builds the per-seed dataset for one sweep cell: generate, split, corrupt.
fn sweep_dataset(
    data: &SweepData,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<(LabeledDataset, Matrix)> {
    let mix = circle_spec(data.classes, data.per_class, data.radius, data.std);
    let raw = generate_mixture(&mix, &mut SeededRng::derive(seed, STREAM_GENERATE))?;
    let mut tagged = split_dataset(
        &raw,
        data.train,
        data.meta,
        data.test,
        &mut SeededRng::derive(seed, STREAM_SPLIT),
    )?;
    let t = spec.build_matrix(data.classes)?;
    tagged.corrupt_train_split(&t, &mut SeededRng::derive(seed, STREAM_CORRUPT))?;
    Ok((tagged, t))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let manifest: SweepManifest = labelnoise::io::read_toml(&args.manifest)?;
    if manifest.methods.is_empty() || manifest.seeds.is_empty() || manifest.noise.is_empty() {
        return Err(Error::invalid_config(
            "manifest needs nonempty methods, seeds, and noise sections",
        ));
    }
    let dir = out_dir(&args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| dir.join("results.csv"));

    let done: std::collections::HashSet<_> = read_records(&results)?
        .iter()
        .map(|r| r.key())
        .collect();

    let mut failures = 0usize;
    let mut ran = 0usize;
    let mut skipped = 0usize;
    for grid in &manifest.noise {
        for &rate in &grid.rates {
            let pairs: Vec<(usize, usize)> =
                grid.pairs.iter().map(|p| (p[0], p[1])).collect();
            let spec = match grid.kind.as_str() {
                "symmetric" => NoiseSpec::Symmetric { rate },
                "pairs" => NoiseSpec::AsymmetricPairs {
                    rate,
                    pairs: pairs.clone(),
                },
                other => {
                    return Err(Error::invalid_config(format!(
                        "unknown noise kind {other:?} in manifest"
                    )))
                }
            };
            for &seed in &manifest.seeds {
                for &method in &manifest.methods {
                    let key = (
                        method,
                        grid.kind.clone(),
                        format!("{rate:.6}"),
                        seed,
                    );
                    if done.contains(&key) {
                        skipped += 1;
                        continue;
                    }
                    eprint!(
                        "cell method={method} kind={} rate={rate} seed={seed} ... ",
                        grid.kind
                    );
                    let cell = sweep_dataset(&manifest.data, &spec, seed).and_then(
                        |(ds, t)| {
                            run_method(
                                &ds,
                                method,
                                &manifest.settings,
                                seed,
                                &grid.kind,
                                rate,
                                Some(&t),
                            )
                        },
                    );
                    match cell {
                        Ok((record, _)) => {
                            append_record(&results, &record)?;
                            ran += 1;
                            eprintln!("ok (acc {:.4})", record.test_accuracy);
                        }
                        Err(e) => {
                            failures += 1;
                            eprintln!("FAILED: {e}");
                        }
                    }
                }
            }
        }
    }
    eprintln!("sweep finished: {ran} ran, {skipped} skipped, {failures} failed");
    println!("{}", results.display());
    if failures > 0 {
        return Err(Error::Divergence {
            iter: 0,
            what: format!("{failures} sweep cell(s) failed"),
        });
    }
    Ok(())
}

/// Maps library errors onto the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Shape(_) => 1,
        Error::Divergence { .. } | Error::Coverage { .. } => 2,
        Error::Io(_) | Error::Parse { .. } => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}
