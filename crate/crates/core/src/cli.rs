//! Command-line interface: `train`, `predict`, `eval`, `gen`, `verify` and
//! `bench`.
//!
//! Any flag may also come from a `key = value` file given with
//! `--config <path>`; values on the command line take precedence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{apply_pca, fit_pca, gen_synth, load_csv, save_csv, stratified_split, MilDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::gsm::GsmDensity;
use crate::inference::{train_logged, ModelConfig};
use crate::kernel::{KernelParams, NormMode};
use crate::metrics::{predict_dataset, EvalReport, DEFAULT_THRESHOLD};
use crate::model::TrainedModel;
use crate::predict::{BagPrediction, DEFAULT_SAMPLES};
use crate::verification;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vgpmil", version, about = "Sparse GP multiple-instance classification")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a bag CSV.
    Train(TrainArgs),
    /// Write per-bag and per-instance probabilities.
    Predict(PredictArgs),
    /// Predict and score against the labels in the file.
    Eval(EvalArgs),
    /// Generate a synthetic bag CSV.
    Gen(GenArgs),
    /// Run the numerical identity checks.
    Verify(VerifyArgs),
    /// Grid of trainings over seeded splits.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsiKind {
    Hs,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Squared,
    Unsquared,
}

impl From<NormArg> for NormMode {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Squared => NormMode::Squared,
            NormArg::Unsquared => NormMode::Unsquared,
        }
    }
}

/// Model and optimizer settings shared by `train` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Number of inducing points (capped at the number of instances).
    #[arg(long, default_value_t = 50)]
    pub inducing: usize,
    #[arg(long, value_enum, default_value_t = PsiKind::Hs)]
    pub psi: PsiKind,
    /// Gamma mixture shape.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Gamma mixture rate.
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Bag-noise odds.
    #[arg(long = "H", default_value_t = 100.0)]
    pub h: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Predictive samples for validation scoring.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Enable kernel hyperparameter updates.
    #[arg(long)]
    pub hyperopt: bool,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// Initial kernel variance.
    #[arg(long, default_value_t = 0.5)]
    pub variance: f64,
    /// Initial lengthscale; defaults to the feature dimension.
    #[arg(long)]
    pub lengthscale: Option<f64>,
    #[arg(long, value_enum, default_value_t = NormArg::Squared)]
    pub norm: NormArg,
    /// Project features on this many principal components first.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub rff_features: usize,
    #[arg(long, default_value_t = 64)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 10)]
    pub hyperopt_steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub hyperopt_rate: f64,
}

impl ModelArgs {
    fn psi(&self) -> Result<GsmDensity> {
        match self.psi {
            PsiKind::Hs => Ok(GsmDensity::HyperbolicSecant),
            PsiKind::Gamma => GsmDensity::gamma_mix(self.alpha, self.beta),
        }
    }

    fn config(&self, n_instances: usize) -> ModelConfig {
        let inducing = if self.inducing > n_instances {
            log::warn!("--inducing {} exceeds {n_instances} instances; using {n_instances}", self.inducing);
            n_instances
        } else {
            self.inducing
        };
        ModelConfig {
            h: self.h,
            inducing,
            max_epochs: self.max_epochs,
            patience: self.patience,
            samples: self.samples,
            rff_features: self.rff_features,
            mc_samples: self.mc_samples,
            hyperopt_steps: self.hyperopt_steps,
            hyperopt_rate: self.hyperopt_rate,
            hyperopt: self.hyperopt,
            seed: self.seed,
        }
    }

    fn kernel(&self, dim: usize) -> Result<KernelParams> {
        KernelParams::new(self.variance, self.lengthscale.unwrap_or(dim as f64), self.norm.into())
    }

    /// Rejects out-of-range values before any data is read.
    fn validate(&self) -> Result<()> {
        self.psi()?.validate()?;
        self.config(usize::MAX).validate()?;
        self.kernel(1)?;
        if self.pca == Some(0) {
            return Err(Error::invalid("pca", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training bag CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation bag CSV used for early stopping.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Hold out this fraction of training bags for validation when no
    /// `--val` file is given.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Output model JSON.
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    /// Training log; one `epoch=.. elbo=.. val_bag_auc=..` line per epoch.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV.
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics JSON; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the prediction CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub bags: usize,
    #[arg(long, default_value_t = 10)]
    pub bag_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_positives: usize,
    #[arg(long, default_value_t = 4)]
    pub max_positives: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GenArgs {
    fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_bags: self.bags,
            bag_size: self.bag_size,
            positives_per_positive_bag: (self.min_positives, self.max_positives),
            dim: self.dim,
            separation: self.separation,
            positive_fraction: self.positive_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Machine-readable JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bag CSV; a synthetic dataset with default generator settings is used
    /// when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Per-cell results CSV.
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Summary CSV with mean and standard deviation across splits.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Number of seeded train/test splits.
    #[arg(long, default_value_t = 2)]
    pub splits: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    pub inducing_grid: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hs,gamma")]
    pub psi_grid: Vec<PsiKind>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0")]
    pub alpha_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,2.5,4.0")]
    pub beta_grid: Vec<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

/// Parses a `key = value` file into `--key value` arguments. Keys may be
/// written with or without leading dashes, with `_` or `-`; `true` and
/// `false` toggle boolean flags.
pub fn config_file_args(path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Data {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            });
        };
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Data {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Removes `--config <path>` (or `--config=<path>`) and splices the file's
/// arguments in right after the subcommand, so explicit flags come later and
/// win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::invalid("config", "missing path after --config"))?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let injected = config_file_args(&path)?;
    if rest.len() < 2 {
        return Ok(rest);
    }
    let mut out: Vec<OsString> = rest[..2].to_vec();
    out.extend(injected);
    out.extend(rest.into_iter().skip(2));
    Ok(out)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| EXIT_OK),
        Command::Predict(a) => cmd_predict(a).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(a).map(|_| EXIT_OK),
        Command::Gen(a) => cmd_gen(a).map(|_| EXIT_OK),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Fits the optional PCA on `train` and applies it to both sets.
fn preprocess(
    train: MilDataset,
    val: Option<MilDataset>,
    pca: Option<usize>,
) -> Result<(MilDataset, Option<MilDataset>, Option<crate::data::PcaTransform>)> {
    let Some(k) = pca else {
        return Ok((train, val, None));
    };
    let t = fit_pca(train.features(), k)?;
    log::info!("pca keeps {k} components, {:.4} of the variance", t.explained_variance_ratio());
    let train = train.with_features(apply_pca(&t, train.features())?)?;
    let val = val
        .map(|v| {
            let x = apply_pca(&t, v.features())?;
            v.with_features(x)
        })
        .transpose()?;
    Ok((train, val, Some(t)))
}

/// Trains with the given settings, streaming log lines to `sink`.
pub fn fit(
    train: MilDataset,
    val: Option<MilDataset>,
    args: &ModelArgs,
    sink: &mut dyn FnMut(&str),
) -> Result<TrainedModel> {
    args.validate()?;
    if let Some(v) = &val {
        if v.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                found: v.dim(),
            });
        }
    }
    let (train, val, pca) = preprocess(train, val, args.pca)?;
    let config = args.config(train.n_instances());
    let kernel = args.kernel(train.dim())?;
    let psi = args.psi()?;
    let model = train_logged(&train, val.as_ref(), &config, kernel, &psi, &mut |rec| sink(&rec.log_line()))?;
    match pca {
        Some(p) => model.with_pca(p),
        None => Ok(model),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    a.model_args.validate()?;
    let data = load_csv(&a.data)?;
    let (train, val) = match &a.val {
        Some(p) => (data, Some(load_csv(p)?)),
        None if a.val_fraction > 0.0 => {
            let (t, v) = stratified_split(&data, a.val_fraction, a.model_args.seed)?;
            (t, Some(v))
        }
        None => (data, None),
    };
    let mut log_file = a.log.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    let mut io_err = None;
    let model = fit(train, val, &a.model_args, &mut |line| {
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    model.save(&a.model)?;
    let meta = model.metadata();
    eprintln!(
        "trained {} epochs, best epoch {} ({:?} {}), model written to {}",
        meta.epochs_run,
        meta.best_epoch,
        meta.monitor,
        meta.best_score,
        a.model.display()
    );
    Ok(())
}

/// Prediction CSV: a `bag` row per bag followed by its `instance` rows.
pub fn write_predictions(path: &Path, data: &MilDataset, preds: &[BagPrediction]) -> Result<()> {
    let mut out = String::from("row,bag_id,instance,prob,std\n");
    for (b, p) in preds.iter().enumerate() {
        let id = &data.bag_ids()[b];
        writeln!(out, "bag,{id},,{},{}", p.mean, p.std).expect("string write");
        for (k, ip) in p.instances.iter().enumerate() {
            writeln!(out, "instance,{id},{},{},{}", data.bag(b)[k], ip.mean, ip.std).expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn load_model_and_data(model: &Path, data: &Path) -> Result<(TrainedModel, MilDataset)> {
    let model = TrainedModel::load(model)?;
    let data = load_csv(data)?;
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: data.dim(),
        });
    }
    Ok((model, data))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (model, data) = load_model_and_data(&a.model, &a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let preds = predict_dataset(&model, &data, a.samples, &mut rng)?;
    write_predictions(&a.out, &data, &preds)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::invalid("threshold", "must lie in [0, 1]"));
    }
    let (model, data) = load_model_and_data(&a.model, &a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let preds = predict_dataset(&model, &data, a.samples, &mut rng)?;
    if let Some(out) = &a.out {
        write_predictions(out, &data, &preds)?;
    }
    let report = EvalReport::from_predictions(&data, &preds, a.threshold, a.samples)?;
    let json = report.to_json()?;
    match &a.report {
        Some(p) => fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let data = gen_synth(&a.synth())?;
    save_csv(&data, &a.out)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let results = verification::run_all();
    for r in &results {
        println!("{}", r.line());
    }
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&results)? + "\n")?;
    }
    Ok(if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

/// One trained and evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub inducing: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub split: usize,
    pub epochs: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
struct Cell {
    psi: PsiKind,
    inducing: usize,
    alpha: f64,
    beta: f64,
    split: usize,
}

fn bench_cells(a: &BenchArgs) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &psi in &a.psi_grid {
        let shapes: Vec<(f64, f64)> = match psi {
            PsiKind::Hs => vec![(f64::NAN, f64::NAN)],
            PsiKind::Gamma => a
                .alpha_grid
                .iter()
                .flat_map(|&al| a.beta_grid.iter().map(move |&be| (al, be)))
                .collect(),
        };
        for (alpha, beta) in shapes {
            for &inducing in &a.inducing_grid {
                for split in 0..a.splits {
                    cells.push(Cell {
                        psi,
                        inducing,
                        alpha,
                        beta,
                        split,
                    });
                }
            }
        }
    }
    cells
}

/// Mixes the run seed with a cell index.
fn cell_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains and evaluates every grid cell. Rows come back in grid order.
pub fn run_bench(a: &BenchArgs, data: &MilDataset) -> Result<Vec<BenchRow>> {
    if a.splits == 0 {
        return Err(Error::invalid("splits", "must be >= 1"));
    }
    a.model_args.validate()?;
    let splits = (0..a.splits)
        .map(|s| stratified_split(data, a.test_fraction, cell_seed(a.model_args.seed, s)))
        .collect::<Result<Vec<_>>>()?;
    let cells = bench_cells(a);
    let run_cell = |(i, cell): (usize, &Cell)| -> Result<BenchRow> {
        let mut args = a.model_args.clone();
        args.psi = cell.psi;
        args.inducing = cell.inducing;
        args.alpha = cell.alpha;
        args.beta = cell.beta;
        args.seed = cell_seed(a.model_args.seed, 1000 + i);
        let (train, test) = &splits[cell.split];
        let model = fit(train.clone(), None, &args, &mut |_| {})?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let preds = predict_dataset(&model, test, args.samples, &mut rng)?;
        let report = EvalReport::from_predictions(test, &preds, DEFAULT_THRESHOLD, args.samples)?;
        let gamma = cell.psi == PsiKind::Gamma;
        Ok(BenchRow {
            model: match cell.psi {
                PsiKind::Hs => "hs".into(),
                PsiKind::Gamma => "gamma".into(),
            },
            inducing: model.inducing_points().nrows(),
            alpha: gamma.then_some(cell.alpha),
            beta: gamma.then_some(cell.beta),
            split: cell.split,
            epochs: model.metadata().epochs_run,
            report,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    pool.install(|| cells.par_iter().enumerate().map(run_cell).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

const METRIC_COLUMNS: [&str; 6] = ["bag_auc", "bag_accuracy", "bag_f1", "instance_auc", "instance_accuracy", "instance_f1"];

fn metric_values(r: &EvalReport) -> [Option<f64>; 6] {
    let inst = r.instance.as_ref();
    [
        r.bag.auc,
        Some(r.bag.accuracy),
        Some(r.bag.f1),
        inst.and_then(|i| i.auc),
        inst.map(|i| i.accuracy),
        inst.map(|i| i.f1),
    ]
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!("model,inducing,alpha,beta,split,epochs,{}\n", METRIC_COLUMNS.join(","));
    for r in rows {
        let metrics: Vec<String> = metric_values(&r.report).iter().map(|v| fmt_opt(*v)).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model,
            r.inducing,
            fmt_opt(r.alpha),
            fmt_opt(r.beta),
            r.split,
            r.epochs,
            metrics.join(",")
        )
        .expect("string write");
    }
    out
}

/// Mean and standard deviation across splits for each grid configuration.
pub fn bench_summary(rows: &[BenchRow]) -> String {
    let mut header = String::from("model,inducing,alpha,beta,splits");
    for c in METRIC_COLUMNS {
        write!(header, ",{c}_mean,{c}_std").expect("string write");
    }
    let mut out = header + "\n";
    let mut groups: Vec<(String, Vec<&BenchRow>)> = Vec::new();
    for r in rows {
        let key = format!("{},{},{},{}", r.model, r.inducing, fmt_opt(r.alpha), fmt_opt(r.beta));
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    for (key, g) in groups {
        write!(out, "{key},{}", g.len()).expect("string write");
        for c in 0..METRIC_COLUMNS.len() {
            let vals: Vec<f64> = g.iter().filter_map(|r| metric_values(&r.report)[c]).collect();
            let (m, s) = mean_std(&vals);
            if vals.is_empty() {
                out.push_str(",,");
            } else {
                write!(out, ",{m},{s}").expect("string write");
            }
        }
        out.push('\n');
    }
    out
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let data = match &a.data {
        Some(p) => load_csv(p)?,
        None => gen_synth(&SynthConfig {
            seed: a.model_args.seed,
            ..SynthConfig::default()
        })?,
    };
    let rows = run_bench(a, &data)?;
    fs::write(&a.out, bench_table(&rows))?;
    let summary = bench_summary(&rows);
    match &a.summary {
        Some(p) => fs::write(p, &summary)?,
        None => print!("{summary}"),
    }
    Ok(())
}
