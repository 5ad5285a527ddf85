//! Command-line front end. `run` returns the process exit code:
//! 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::Priors;
use crate::dataio::{
    load_dir, preprocess_dataset, preprocess_header, save_dir, split, synth_dataset,
    write_dataset_csv, Recording, SplitSpec, SynthConfig, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::features::{feature_dataset, ms_window, write_feature_csv, TdThresholds};
use crate::nn::gradcheck::{layer_suite, model_check, LAYER_TOLERANCE, MODEL_TOLERANCE};
use crate::nn::{load_model, AdamConfig};
use crate::trainer::{
    baseline_repeats, batch_sweep, evaluate, per_subject_report, run_baseline, subject_report_csv,
    train_dlpr, write_run, Baseline, TrainConfig, SWEEP_BATCHES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const DLPR_WINDOW: usize = 300;
const DLPR_SHIFT: usize = 50;
const TD_WINDOW_MS: f64 = 200.0;
const TD_INCREMENT_MS: f64 = 75.0;

#[derive(Parser, Debug)]
#[command(
    name = "dlpr",
    version,
    about = "sEMG gesture recognition with MPP/MZP preprocessing and a 1D CNN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-class EMG dataset
    Synth(SynthArgs),
    /// Write MPP/MZP rows for every window as CSV
    Preprocess(PreprocessArgs),
    /// Write time-domain feature rows (MAV, WL, ZC, SSC) for every window as CSV
    Features(FeaturesArgs),
    /// Train on a 60/40 split and write metrics (and the model for dlpr)
    Train(TrainArgs),
    /// Evaluate a saved model
    Eval(EvalArgs),
    /// Train once per batch size on the same split
    Sweep(SweepArgs),
    /// Finite-difference gradient checks of every layer and a toy model
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one model per subject; CSV of subject_id, dash_score, accuracy
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling rate in Hz
    #[arg(long, default_value_t = 2000.0)]
    rate: f64,
    /// Windows of 300/50 samples each class recording yields
    #[arg(long, default_value_t = 200)]
    windows_per_class: usize,
    /// Largest to smallest channel amplitude
    #[arg(long, default_value_t = 10.0)]
    envelope_ratio: f64,
    #[arg(long, default_value_t = 5)]
    repetitions: u32,
    /// Output directory (one CSV + sidecar per class)
    #[arg(long)]
    out: PathBuf,
}

/// Window flags in samples or in milliseconds, never both.
#[derive(Args, Debug, Clone, Default)]
struct WindowArgs {
    /// Window length in samples [default: 300 for dlpr, 200 ms for knn/lda]
    #[arg(long, requires = "shift", conflicts_with_all = ["window_ms", "increment_ms"])]
    window: Option<usize>,
    /// Window shift in samples [default: 50 for dlpr, 75 ms for knn/lda]
    #[arg(long, requires = "window")]
    shift: Option<usize>,
    /// Window length in milliseconds, floored at the recording rate
    #[arg(long, requires = "increment_ms")]
    window_ms: Option<f64>,
    /// Window increment in milliseconds, floored at the recording rate
    #[arg(long, requires = "window_ms")]
    increment_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Windowing {
    Samples(usize, usize),
    Millis(f64, f64),
}

impl WindowArgs {
    fn resolve(&self, default: Windowing) -> Windowing {
        match (self.window, self.shift, self.window_ms, self.increment_ms) {
            (Some(w), Some(s), _, _) => Windowing::Samples(w, s),
            (_, _, Some(w), Some(i)) => Windowing::Millis(w, i),
            _ => default,
        }
    }
}

impl Windowing {
    fn samples(self, recs: &[Recording]) -> Result<(usize, usize)> {
        match self {
            Windowing::Samples(w, s) => Ok((w, s)),
            Windowing::Millis(w, i) => {
                let rate = recs[0].sampling_rate;
                if recs.iter().any(|r| r.sampling_rate != rate) {
                    return Err(Error::Config(
                        "millisecond windows need every recording at the same sampling rate".into(),
                    ));
                }
                ms_window(rate, w, i)
            }
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ThresholdArgs {
    /// Minimum amplitude step for a zero crossing
    #[arg(long, default_value_t = 0.0)]
    zc_threshold: f64,
    /// Minimum slope product for a slope sign change
    #[arg(long, default_value_t = 0.0)]
    ssc_threshold: f64,
}

impl ThresholdArgs {
    fn get(&self) -> TdThresholds {
        TdThresholds {
            zc: self.zc_threshold,
            ssc: self.ssc_threshold,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    /// Split without preserving class proportions
    #[arg(long)]
    no_stratify: bool,
    /// Keep all windows of a repetition on the same side of the split
    #[arg(long)]
    split_by_repetition: bool,
}

impl SplitArgs {
    fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed,
            stratified: !self.no_stratify,
            by_repetition: self.split_by_repetition,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    /// Mini-batch size (at least 2)
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// CSV recording or directory of recordings
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum ModelKind {
    Dlpr,
    Knn,
    Lda,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum PriorArg {
    Equal,
    Empirical,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Seed for weight init, shuffling and the split (required)
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModelKind::Dlpr)]
    model: ModelKind,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Neighbours for knn (odd)
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Class priors for lda
    #[arg(long, value_enum, default_value_t = PriorArg::Equal)]
    priors: PriorArg,
    /// knn/lda: also report mean and std over this many seeded splits
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Label stored in the metrics [default: name of --data]
    #[arg(long)]
    dataset_id: Option<String>,
    /// Output directory: metrics.json, confusion.csv, curves.csv, model.dlprm
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Evaluate only the test side of the split with this seed
    #[arg(long)]
    split_seed: Option<u64>,
    #[command(flatten)]
    split: SplitArgs,
    /// Output directory for metrics.json and confusion.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Comma-separated batch sizes
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_BATCHES)]
    batches: Vec<usize>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    dataset_id: Option<String>,
    /// Output directory: batch_<n>/ per size and summary.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::NonFiniteLoss { .. } | Error::NonFiniteInput { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Applies `DLPR_THREADS` (0 or unset: one worker per core).
fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("DLPR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("DLPR_THREADS must be a non-negative integer, got {v:?}"))?;
    // already initialised when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load(path: &Path) -> Result<Vec<Recording>> {
    let recs = load_dir(path)?;
    let c = recs[0].num_channels();
    if recs.iter().any(|r| r.num_channels() != c) {
        return Err(Error::ChannelMismatch(format!(
            "recordings under {} have different channel counts",
            path.display()
        )));
    }
    Ok(recs)
}

fn preprocessed(recs: &[Recording], window: &WindowArgs) -> Result<WindowedDataset> {
    let (w, s) = window
        .resolve(Windowing::Samples(DLPR_WINDOW, DLPR_SHIFT))
        .samples(recs)?;
    preprocess_dataset(recs, w, s)
}

fn td_dataset(
    recs: &[Recording],
    window: &WindowArgs,
    thr: TdThresholds,
) -> Result<WindowedDataset> {
    let (w, s) = window
        .resolve(Windowing::Millis(TD_WINDOW_MS, TD_INCREMENT_MS))
        .samples(recs)?;
    feature_dataset(recs, w, s, thr)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        classes: a.classes,
        channels: a.channels,
        sampling_rate: a.rate,
        seed: a.seed,
        windows_per_class: a.windows_per_class,
        envelope_ratio: a.envelope_ratio,
        repetitions: a.repetitions,
        ..SynthConfig::default()
    };
    let recs = synth_dataset(&cfg)?;
    let files = save_dir(&a.out, &recs)?;
    println!("wrote {} recordings to {}", files.len(), a.out.display());
    Ok(EXIT_OK)
}

fn preprocess(a: PreprocessArgs) -> Result<i32> {
    let recs = load(&a.data)?;
    let ds = preprocessed(&recs, &a.window)?;
    write_dataset_csv(&a.out, &preprocess_header(recs[0].num_channels()), &ds)?;
    println!("wrote {} rows to {}", ds.len(), a.out.display());
    Ok(EXIT_OK)
}

fn features(a: FeaturesArgs) -> Result<i32> {
    let recs = load(&a.data)?;
    let ds = td_dataset(&recs, &a.window, a.thresholds.get())?;
    write_feature_csv(&a.out, &ds)?;
    println!("wrote {} rows to {}", ds.len(), a.out.display());
    Ok(EXIT_OK)
}

fn train_config(
    seed: u64,
    optim: &OptimArgs,
    split: &SplitArgs,
    dataset_id: String,
) -> TrainConfig {
    TrainConfig {
        batch_size: optim.batch,
        epochs: optim.epochs,
        seed,
        adam: AdamConfig {
            lr: optim.lr,
            ..AdamConfig::default()
        },
        split: split.spec(seed),
        dataset_id,
        curves: true,
    }
}

fn train(a: TrainArgs) -> Result<i32> {
    let recs = load(&a.data)?;
    let id = a
        .dataset_id
        .clone()
        .unwrap_or_else(|| dataset_name(&a.data));
    let cfg = train_config(a.seed, &a.optim, &a.split, id);
    cfg.validate()?;

    let baseline = match a.model {
        ModelKind::Dlpr => None,
        ModelKind::Knn => Some(Baseline::Knn { k: a.k }),
        ModelKind::Lda => Some(Baseline::Lda {
            priors: match a.priors {
                PriorArg::Equal => Priors::Equal,
                PriorArg::Empirical => Priors::Empirical,
            },
        }),
    };
    let Some(kind) = baseline else {
        let ds = preprocessed(&recs, &a.window)?;
        let (tr, te) = split(&ds, &cfg.split)?;
        let (model, metrics) = train_dlpr(&tr, Some(&te), &cfg)?;
        write_run(&a.out, &metrics, Some(&model))?;
        println!(
            "dlpr accuracy {:.4} ({} train / {} test windows, {:.2} s)",
            metrics.accuracy, metrics.train_size, metrics.test_size, metrics.training_time_sec
        );
        return Ok(EXIT_OK);
    };

    let ds = td_dataset(&recs, &a.window, a.thresholds.get())?;
    let (tr, te) = split(&ds, &cfg.split)?;
    let mut metrics = run_baseline(&tr, &te, kind)?;
    metrics.dataset_id = cfg.dataset_id.clone();
    metrics.seed = a.seed;
    write_run(&a.out, &metrics, None)?;
    println!("{} accuracy {:.4}", kind.name(), metrics.accuracy);
    if a.repeats > 1 {
        let summary = baseline_repeats(&ds, kind, &cfg.split, a.repeats)?;
        let json =
            serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(a.out.join("repeats.json"), json + "\n")?;
        println!(
            "{} over {} splits: {:.4} +/- {:.4}",
            kind.name(),
            a.repeats,
            summary.mean,
            summary.std
        );
    }
    Ok(EXIT_OK)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let recs = load(&a.data)?;
    let mut ds = preprocessed(&recs, &a.window)?;
    if let Some(seed) = a.split_seed {
        ds = split(&ds, &a.split.spec(seed))?.1;
    }
    let mut metrics = evaluate(&model, &ds)?;
    metrics.dataset_id = dataset_name(&a.data);
    if let Some(out) = &a.out {
        write_run(out, &metrics, None)?;
    }
    println!(
        "accuracy {:.4} on {} windows",
        metrics.accuracy, metrics.test_size
    );
    Ok(EXIT_OK)
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let recs = load(&a.data)?;
    let optim = OptimArgs {
        batch: a.batches.first().copied().unwrap_or(2),
        epochs: a.epochs,
        lr: a.lr,
    };
    let id = a
        .dataset_id
        .clone()
        .unwrap_or_else(|| dataset_name(&a.data));
    let cfg = train_config(a.seed, &optim, &a.split, id);
    for &b in &a.batches {
        TrainConfig {
            batch_size: b,
            ..cfg.clone()
        }
        .validate()?;
    }
    let ds = preprocessed(&recs, &a.window)?;
    let (tr, te) = split(&ds, &cfg.split)?;
    let runs = batch_sweep(&tr, Some(&te), &cfg, &a.batches)?;
    let mut summary = String::from("batch_size,accuracy,training_time_sec\n");
    for (model, metrics) in &runs {
        let b = metrics.batch_size.unwrap_or_default();
        write_run(&a.out.join(format!("batch_{b}")), metrics, Some(model))?;
        summary.push_str(&format!(
            "{b},{},{}\n",
            metrics.accuracy, metrics.training_time_sec
        ));
        println!(
            "batch {b}: accuracy {:.4}, {:.2} s",
            metrics.accuracy, metrics.training_time_sec
        );
    }
    fs::write(a.out.join("summary.csv"), summary)?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let mut ok = true;
    for r in layer_suite(a.seed)? {
        let pass = r.passes(LAYER_TOLERANCE);
        ok &= pass;
        println!(
            "{:<24} max rel error {:.3e} over {:>4} entries  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            if pass { "ok" } else { "FAIL" }
        );
    }
    let r = model_check(a.seed)?;
    let pass = r.passes(MODEL_TOLERANCE);
    ok &= pass;
    println!(
        "{:<24} max rel error {:.3e} over {:>4} entries  {}",
        r.name,
        r.max_rel_error,
        r.checked,
        if pass { "ok" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_NUMERIC })
}

fn report(a: ReportArgs) -> Result<i32> {
    let recs = load(&a.data)?;
    // subjects in order of first appearance
    let mut ids: Vec<&str> = Vec::new();
    for r in &recs {
        if !ids.contains(&r.subject.id.as_str()) {
            ids.push(&r.subject.id);
        }
    }
    let mut subjects = Vec::new();
    let mut models = Vec::new();
    let mut tests = Vec::new();
    for id in ids {
        let own: Vec<Recording> = recs
            .iter()
            .filter(|r| r.subject.id == id)
            .cloned()
            .collect();
        let cfg = train_config(a.seed, &a.optim, &a.split, id.to_string());
        let ds = preprocessed(&own, &a.window)?;
        let (tr, te) = split(&ds, &cfg.split)?;
        let (model, _) = train_dlpr(&tr, Some(&te), &cfg)?;
        subjects.push(own[0].subject.clone());
        models.push(model);
        tests.push(te);
    }
    let rows = per_subject_report(&subjects, &models, &tests)?;
    let csv = subject_report_csv(&rows);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}
