//! `mcgan`: train, evaluate, predict, synthesize data, export activations
//! and run the verification suites.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.
//! Precedence for training settings: command-line flag, then `MCGAN_*`
//! environment variable, then `--config` file, then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mcgan::checkpoint::{load_checkpoint, load_memory_state, save_checkpoint, save_memory_state};
use mcgan::data::{synthesize_two_task_dataset, Dataset, GtMode};
use mcgan::memory::MemoryState;
use mcgan::raster;
use mcgan::tensor::Scalar;
use mcgan::training::{continue_training, evaluate_dataset, evaluate_predictions, McGan, TrainConfig};
use mcgan::verify::{self, Suite};

#[derive(Parser, Debug)]
#[command(name = "mcgan", version, about = "Per-task, per-viewer saliency maps from a GAN with viewer memory")]
struct Cli {
    /// Seed for initialization, dropout, sampling and AUC negatives.
    #[arg(long, global = true, env = "MCGAN_SEED")]
    seed: Option<u64>,

    /// Refuse to run unless a seed is given, so artifacts are reproducible
    /// byte for byte.
    #[arg(long, global = true, env = "MCGAN_DETERMINISTIC")]
    deterministic: bool,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes `losses.csv`, `config` and `checkpoint/` to `--out`.
    Train(TrainArgs),
    /// Score a checkpoint (or the ground truth itself) on a dataset.
    Eval(EvalArgs),
    /// Predict one saliency map as a PNG.
    Predict(PredictArgs),
    /// Write the synthetic two-task dataset.
    Synth(SynthArgs),
    /// Write generator activation heatmaps as PNGs.
    Activations(ActivationsArgs),
    /// Run the oracle suites; nonzero exit on any failure.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GtArg {
    PerSubject,
    Pooled,
}

impl From<GtArg> for GtMode {
    fn from(g: GtArg) -> GtMode {
        match g {
            GtArg::PerSubject => GtMode::PerSubject,
            GtArg::Pooled => GtMode::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

/// Flags mirroring the training config; unset flags keep the file value.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// `key=value` config file.
    #[arg(long, env = "MCGAN_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "MCGAN_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long = "lr", env = "MCGAN_LEARNING_RATE")]
    learning_rate: Option<f64>,
    #[arg(long, env = "MCGAN_EPOCHS")]
    epochs: Option<usize>,
    /// Weight of the L1 content term.
    #[arg(long, env = "MCGAN_CONTENT_WEIGHT")]
    content_weight: Option<f64>,
    #[arg(long, env = "MCGAN_MEMORY")]
    memory: Option<Switch>,
    #[arg(long, env = "MCGAN_CONDITIONAL")]
    conditional: Option<Switch>,
    /// Square image size the networks run at; datasets are resampled to it.
    #[arg(long, env = "MCGAN_SIZE")]
    size: Option<usize>,
    #[arg(long, env = "MCGAN_SLOTS")]
    slots: Option<usize>,
    #[arg(long, env = "MCGAN_BASE_WIDTH")]
    base_width: Option<usize>,
    /// Stop after this many optimizer steps (0: no limit).
    #[arg(long, env = "MCGAN_MAX_STEPS")]
    max_steps: Option<usize>,
    #[arg(long, env = "MCGAN_TEST_MEMORY_UPDATES")]
    test_memory_updates: Option<Switch>,
    #[arg(long, env = "MCGAN_MEMORY_LR_SCALE")]
    memory_lr_scale: Option<f64>,
}

impl ConfigFlags {
    fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let flag = |s: Switch| if bool::from(s) { "on" } else { "off" }.to_owned();
        let pairs: [(&str, Option<String>); 13] = [
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("content_weight", self.content_weight.map(|v| v.to_string())),
            ("memory_enabled", self.memory.map(flag)),
            ("conditional_enabled", self.conditional.map(flag)),
            ("seed", seed.map(|v| v.to_string())),
            ("image_size", self.size.map(|v| v.to_string())),
            ("slots", self.slots.map(|v| v.to_string())),
            ("base_width", self.base_width.map(|v| v.to_string())),
            ("max_steps", self.max_steps.map(|v| v.to_string())),
            ("test_memory_updates", self.test_memory_updates.map(flag)),
            ("memory_lr_scale", self.memory_lr_scale.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
    /// Ground-truth maps used as training targets.
    #[arg(long, value_enum, default_value = "per-subject")]
    gt: GtArg,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: Dtype,
    /// Continue from `<out>/checkpoint`, keeping its config and epoch count;
    /// `--epochs` may raise the target.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Per-(image, task) metrics CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-task means CSV; defaults to `<out stem>_summary.csv`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Restrict to these task indices (repeatable).
    #[arg(long = "task")]
    tasks: Vec<usize>,
    #[arg(long, value_enum, default_value = "per-subject")]
    gt: GtArg,
    /// Score the ground-truth maps as predictions instead of a model.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// RGB or grayscale PNG of any size.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    task: usize,
    #[arg(long)]
    out: PathBuf,
    /// Subject memory file: loaded when present, advanced by this
    /// prediction, then saved. Without it a fresh state is used.
    #[arg(long)]
    memory_state: Option<PathBuf>,
    /// Subject id recorded in a newly created memory file.
    #[arg(long, default_value = "subject")]
    subject: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    subjects: usize,
    #[arg(long, default_value_t = 64)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args, Debug)]
struct ActivationsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0)]
    task: usize,
    /// Convolution layers, 1-based, comma separated; all when omitted.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Directory receiving `layer_NN.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Gradients,
    Metrics,
    Memory,
    All,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    suite: SuiteArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCGAN_LOG", level)).init();
    if cli.deterministic && cli.seed.is_none() && !seed_in_config(&cli.command) {
        eprintln!("error: --deterministic requires --seed, MCGAN_SEED or a config file with `seed`");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn seed_in_config(command: &Command) -> bool {
    let Command::Train(args) = command else {
        return false;
    };
    args.config
        .config
        .as_ref()
        .and_then(|p| fs::read_to_string(p).ok())
        .is_some_and(|text| text.lines().any(|l| l.split('=').next().map(str::trim) == Some("seed")))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match &cli.command {
        Command::Train(args) => match args.dtype {
            Dtype::F32 => train::<f32>(args, seed),
            Dtype::F64 => train::<f64>(args, seed),
        }?,
        Command::Eval(args) => eval(args, seed)?,
        Command::Predict(args) => match checkpoint_dtype(&args.checkpoint)? {
            Dtype::F32 => predict::<f32>(args)?,
            Dtype::F64 => predict::<f64>(args)?,
        },
        Command::Activations(args) => match checkpoint_dtype(&args.checkpoint)? {
            Dtype::F32 => activations::<f32>(args)?,
            Dtype::F64 => activations::<f64>(args)?,
        },
        Command::Synth(args) => synth(args, seed)?,
        Command::Verify(args) => return Ok(verify_suites(args.suite)),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(dir: &Path, gt: GtArg) -> Result<Dataset> {
    Dataset::load(dir, gt.into()).with_context(|| format!("loading dataset {}", dir.display()))
}

fn train<T: Scalar>(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let checkpoint = args.out.join("checkpoint");
    let model: McGan<T> = if args.resume {
        let mut model: McGan<T> = load_checkpoint(&checkpoint)?;
        if let Some(epochs) = args.config.epochs {
            model.config.epochs = epochs;
        }
        model
    } else {
        let cfg = args.config.resolve(seed)?;
        let dataset = load_dataset(&args.dataset, args.gt)?;
        McGan::new(cfg, dataset.n_tasks)?
    };
    let dataset = load_dataset(&args.dataset, args.gt)?.resized(model.config.image_size)?;
    fs::create_dir_all(&args.out)?;
    model.config.save(&args.out.join("config"))?;
    let report = continue_training(model, &dataset, Some(&args.out), |e| {
        println!("epoch {} steps {} d_loss {:.6} g_loss {:.6}", e.epoch, e.steps, e.d_loss, e.g_loss);
    })?;
    if report.epochs.is_empty() {
        // Resumed at or past the epoch target: still leave a checkpoint.
        save_checkpoint(&report.model, &checkpoint)?;
    }
    println!("checkpoint {}", checkpoint.display());
    Ok(())
}

fn checkpoint_dtype(dir: &Path) -> Result<Dtype> {
    let manifest = fs::read_to_string(dir.join("manifest"))
        .with_context(|| format!("reading checkpoint {}", dir.display()))?;
    match manifest.lines().nth(1) {
        Some("dtype f32") => Ok(Dtype::F32),
        Some("dtype f64") => Ok(Dtype::F64),
        other => bail!("checkpoint {}: unrecognized dtype line {other:?}", dir.display()),
    }
}

fn eval(args: &EvalArgs, seed: Option<u64>) -> Result<()> {
    let dataset = load_dataset(&args.dataset, args.gt)?;
    let seed = seed.unwrap_or(0);
    let report = match (&args.checkpoint, args.oracle) {
        (_, true) => evaluate_predictions(&dataset, &args.tasks, seed, |e| Ok(e.gt.clone()))?,
        (Some(dir), false) => match checkpoint_dtype(dir)? {
            Dtype::F32 => evaluate_dataset(&mut load_checkpoint::<f32>(dir)?, &dataset, &args.tasks, seed)?,
            Dtype::F64 => evaluate_dataset(&mut load_checkpoint::<f64>(dir)?, &dataset, &args.tasks, seed)?,
        },
        (None, false) => unreachable!("clap requires --checkpoint without --oracle"),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write_csv(&args.out)?;
    let summary = args.summary.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.out.with_file_name(format!("{stem}_summary.csv"))
    });
    report.write_summary_csv(&summary)?;
    println!("task count auc nss cc kl sm");
    for (task, (s, n)) in &report.summary {
        println!("{task} {n} {:.4} {:.4} {:.4} {:.4} {:.4}", s.auc, s.nss, s.cc, s.kl, s.sm);
    }
    if report.skipped > 0 {
        println!("skipped {} degenerate examples", report.skipped);
    }
    Ok(())
}

/// Channel-major RGB planes and dimensions; grayscale inputs are replicated.
fn read_image(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    raster::read_rgb_png(path).with_context(|| format!("reading image {}", path.display()))
}

fn resize_planes(planes: &[f64], w: usize, h: usize, size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * size * size);
    for plane in planes.chunks(w * h) {
        out.extend(raster::resize_bilinear(plane, w, h, size, size)?);
    }
    Ok(out)
}

fn predict<T: Scalar>(args: &PredictArgs) -> Result<()> {
    let mut model: McGan<T> = load_checkpoint(&args.checkpoint)?;
    if args.task >= model.n_tasks {
        bail!("task {} outside 0..{}", args.task, model.n_tasks);
    }
    let size = model.config.image_size;
    let (planes, w, h) = read_image(&args.image)?;
    let input = resize_planes(&planes, w, h, size)?;
    let map = match &args.memory_state {
        Some(path) => {
            let mut state = if path.exists() {
                load_memory_state::<T>(path, model.config.slots)?
            } else {
                MemoryState::new(args.subject.clone(), model.config.slots)
            };
            let map = model.predict(&input, args.task, Some(&mut state), true)?;
            save_memory_state(&state, path)?;
            map
        }
        None => model.predict(&input, args.task, None, false)?,
    };
    let resized = raster::resize_bilinear(map.values(), size, size, w, h)?;
    let clamped: Vec<f64> = resized.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    raster::write_gray_png(&args.out, &clamped, w, h)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn activations<T: Scalar>(args: &ActivationsArgs) -> Result<()> {
    let mut model: McGan<T> = load_checkpoint(&args.checkpoint)?;
    if args.task >= model.n_tasks {
        bail!("task {} outside 0..{}", args.task, model.n_tasks);
    }
    let size = model.config.image_size;
    let (planes, w, h) = read_image(&args.image)?;
    let input = resize_planes(&planes, w, h, size)?;
    let x = model.network_input(&[&input], &[args.task])?;
    let layers: Vec<usize> =
        if args.layers.is_empty() { (1..=model.generator.conv_layers()).collect() } else { args.layers.clone() };
    let maps = model.generator.export_activations(&x, &layers)?;
    fs::create_dir_all(&args.out)?;
    for (id, map) in layers.iter().zip(maps) {
        let values: Vec<f64> = map.data().iter().map(|v| v.as_f64()).collect();
        let path = args.out.join(format!("layer_{id:02}.png"));
        raster::write_gray_png(&path, &values, size, size)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let dataset = synthesize_two_task_dataset(args.subjects, args.images, args.size, seed.unwrap_or(0))?;
    dataset.save(&args.out)?;
    println!(
        "wrote {} images and {} examples to {}",
        dataset.images.len(),
        dataset.examples.len(),
        args.out.display()
    );
    Ok(())
}

fn verify_suites(which: SuiteArg) -> ExitCode {
    let suites: Vec<Suite> = match which {
        SuiteArg::Gradients => vec![Suite::Gradients],
        SuiteArg::Metrics => vec![Suite::Metrics],
        SuiteArg::Memory => vec![Suite::Memory],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    let mut ok = true;
    for suite in suites {
        let report = verify::run(suite);
        println!("{report}");
        for failure in &report.failures {
            println!("  FAIL {failure}");
        }
        ok &= report.ok();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
