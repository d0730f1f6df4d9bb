use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use mtl_rank::data::{
    generate_synthetic, load_dataset, read_records, save_dataset, Format, MultiTaskDataset,
    SyntheticConfig,
};
use mtl_rank::evaluate::{
    grid_search, loto_cv, predict_in_task, predict_out_of_task, task_metrics, CvReport,
    EvalOptions, GridSpec, TaskReport,
};
use mtl_rank::kernels::{KernelSpec, PseudoKernel};
use mtl_rank::model_io::{load_model, save_model};
use mtl_rank::qp::CoordinateOptions;
use mtl_rank::ranking::PairStrategy;
use mtl_rank::trainer::{train, PairOptions};
use mtl_rank::{Hyperparameters, TrainOptions, Variant};

/// Multi-task SVMs with auxiliary pairwise-rank supervision.
#[derive(Parser, Debug)]
#[command(name = "mtl-rank", version)]
struct Cli {
    /// Increase log verbosity (-v debug, -vv trace); RUST_LOG also applies.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Flat key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate related synthetic tasks with noisy labels and oracle scores.
    Synth(SynthArgs),
    /// Train a model and write it as JSON.
    Train(TrainArgs),
    /// Score instances with a trained model, one line per input row.
    Predict(PredictArgs),
    /// Score a labelled dataset with a trained model and report per-task metrics.
    Eval(EvalArgs),
    /// Leave-one-task-out cross-validation.
    Cv(CvArgs),
    /// Grid search scored by out-of-task AUC on validation tasks.
    Grid(GridArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of training tasks.
    #[arg(long, default_value_t = 5)]
    tasks: usize,
    /// Validation tasks written to validation.csv.
    #[arg(long, default_value_t = 3)]
    val_tasks: usize,
    /// Test tasks written to test.csv.
    #[arg(long, default_value_t = 3)]
    test_tasks: usize,
    /// Instances per task.
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    task_spread: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_band: f64,
    #[arg(long, default_value_t = 0.3)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    score_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for train.csv, validation.csv, test.csv and truth.json.
    #[arg(long, short, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long, default_value = "ts")]
    variant: Variant,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.1)]
    a: f64,
    /// linear or rbf.
    #[arg(long, default_value = "linear")]
    kernel: String,
    /// RBF width, used with --kernel rbf.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Apply the base kernel to raw difference vectors instead of expanding
    /// pseudo-examples in feature space.
    #[arg(long)]
    raw_delta_kernel: bool,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// all, adjacent or sampled:K.
    #[arg(long, default_value = "adjacent")]
    pairs: PairStrategy,
    /// Score gaps at or below this value are treated as ties and produce no pair.
    #[arg(long, default_value_t = 0.0)]
    tie_epsilon: f64,
    /// Seed for sampled pairs and the solver's sweep order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// KKT tolerance of the dual solver.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Z-score features with training statistics (stored in the model).
    #[arg(long)]
    standardize: bool,
    /// Append a constant 1 feature.
    #[arg(long)]
    bias: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    model: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Dataset file whose feature columns are scored; labels and scores are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Scores file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// `shared` (out-of-task) or `task:<id>` (in-task).
    #[arg(long, default_value = "shared")]
    mode: Mode,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, short)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `shared`, or `task` to score each task with its own trained predictor.
    #[arg(long, default_value = "shared")]
    mode: String,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// JSONL report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Worker threads for folds; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Comma-separated values; each list defaults to the standard search range.
    #[arg(long, value_delimiter = ',')]
    mu_values: Option<Vec<f64>>,
    #[arg(long = "C-values", value_delimiter = ',')]
    c_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gamma_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    a_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Retrain the best cell on the training set and save it here.
    #[arg(long)]
    best_model: Option<PathBuf>,
}

#[derive(Debug, Clone)]
enum Mode {
    Shared,
    Task(String),
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shared" => Ok(Mode::Shared),
            _ => match s.strip_prefix("task:") {
                Some(id) if !id.is_empty() => Ok(Mode::Task(id.to_string())),
                _ => Err(format!("expected `shared` or `task:<id>`, got `{s}`")),
            },
        }
    }
}

/// A failure caused by the user's input rather than by the program.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl HyperArgs {
    fn resolve(&self) -> anyhow::Result<Hyperparameters> {
        let kernel = match self.kernel.as_str() {
            "linear" => KernelSpec::Linear,
            "rbf" => KernelSpec::Rbf { gamma: self.gamma },
            other => return Err(usage(format!("unknown kernel `{other}` (expected linear or rbf)"))),
        };
        let hyper = Hyperparameters {
            variant: self.variant,
            mu: self.mu,
            c: self.c,
            a: self.a,
            kernel,
            pseudo_kernel: if self.raw_delta_kernel {
                PseudoKernel::RawDelta
            } else {
                PseudoKernel::FeatureSpace
            },
        };
        hyper.validate()?;
        Ok(hyper)
    }
}

impl FitArgs {
    fn resolve(&self) -> TrainOptions {
        let mut solver = CoordinateOptions::with_tol(self.tol);
        solver.max_sweeps = self.max_sweeps;
        solver.order = mtl_rank::qp::SweepOrder::Shuffled(self.seed);
        TrainOptions {
            pairs: PairOptions {
                strategy: self.pairs,
                tie_epsilon: self.tie_epsilon,
                seed: self.seed,
                ..PairOptions::default()
            },
            solver,
            standardize: self.standardize,
            bias: self.bias,
        }
    }
}

fn load(path: &Path) -> anyhow::Result<MultiTaskDataset> {
    load_dataset(path, Format::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    if args.tasks == 0 {
        return Err(usage("--tasks must be positive"));
    }
    let config = SyntheticConfig {
        tasks: args.tasks + args.val_tasks + args.test_tasks,
        m: args.m,
        d: args.d,
        task_spread: args.task_spread,
        noise_band: args.noise_band,
        flip_prob: args.flip_prob,
        score_noise: args.score_noise,
        seed: args.seed,
    };
    let (all, truth) = generate_synthetic(&config)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let splits = [
        ("train", 0..args.tasks),
        ("validation", args.tasks..args.tasks + args.val_tasks),
        ("test", args.tasks + args.val_tasks..config.tasks),
    ];
    let mut split_ids = serde_json::Map::new();
    for (name, range) in splits {
        let path = args.out_dir.join(format!("{name}.csv"));
        let indices: Vec<usize> = range.collect();
        split_ids.insert(
            name.to_string(),
            serde_json::Value::from(indices.iter().map(|&t| all.task(t).task_id()).collect::<Vec<_>>()),
        );
        if indices.is_empty() {
            fs::write(&path, "").with_context(|| format!("writing {}", path.display()))?;
        } else {
            save_dataset(&all.select(&indices)?, &path, Format::Csv)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        println!("wrote {} ({} tasks)", path.display(), indices.len());
    }
    let sidecar = serde_json::json!({
        "config": config,
        "splits": split_ids,
        "truth": truth,
    });
    let path = args.out_dir.join("truth.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let hyper = args.hyper.resolve()?;
    let options = args.fit.resolve();
    let dataset = load(&args.data)?;
    let model = train(&dataset, &hyper, &options)?;
    save_model(&model, &args.model).with_context(|| format!("writing {}", args.model.display()))?;
    let d = &model.diagnostics;
    println!("variant         {}", hyper.variant);
    println!("dual objective  {:.10}", model.dual.objective);
    println!("kkt residual    {:.3e}", model.dual.kkt_residual);
    println!(
        "converged       {} after {} sweeps",
        model.dual.converged, model.dual.iterations
    );
    println!(
        "support         {} of {} instances, {} of {} rank pairs ({} dropped)",
        d.support_instances, d.instance_vars, d.support_pairs, d.rank_vars, d.dropped_pairs
    );
    println!("model           {}", args.model.display());
    if !model.dual.converged {
        log::warn!("solver stopped before reaching the KKT tolerance");
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    if let Mode::Task(id) = &args.mode {
        if model.task_index(id).is_none() {
            return Err(usage(format!("task `{id}` is not part of the model")));
        }
    }
    let file = fs::File::open(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let records = read_records(file, Format::from_path(&args.input))?;
    let mut out = String::new();
    for r in &records {
        let score = match &args.mode {
            Mode::Shared => predict_out_of_task(&model, &r.features)?,
            Mode::Task(id) => predict_in_task(&model, id, &r.features)?,
        };
        out.push_str(&format!("{score:?}\n"));
    }
    write_output(args.output.as_deref(), &out)
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let in_task = match args.mode.as_str() {
        "shared" => false,
        "task" => true,
        other => return Err(usage(format!("unknown mode `{other}` (expected shared or task)"))),
    };
    let model = load_model(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let dataset = load(&args.data)?;
    let mut tasks = Vec::with_capacity(dataset.num_tasks());
    for task in dataset.tasks() {
        let scores = task
            .instances()
            .iter()
            .map(|x| {
                if in_task {
                    predict_in_task(&model, task.task_id(), x)
                } else {
                    predict_out_of_task(&model, x)
                }
            })
            .collect::<mtl_rank::Result<Vec<f64>>>()?;
        tasks.push(TaskReport {
            task_id: task.task_id().to_string(),
            variant: model.hyper.variant,
            metrics: task_metrics(&scores, task.labels(), args.threshold),
        });
    }
    let report = CvReport::from_tasks(tasks);
    print!("{}", report.to_table());
    if let Some(path) = &args.report {
        fs::write(path, report.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> anyhow::Result<()> {
    let hyper = args.hyper.resolve()?;
    let dataset = load(&args.data)?;
    let eval = EvalOptions {
        threshold: args.threshold,
        jobs: args.jobs.max(1),
    };
    let report = loto_cv(&dataset, &hyper, &args.fit.resolve(), &eval)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.report {
        fs::write(path, report.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> anyhow::Result<()> {
    let template = args.hyper.resolve()?;
    let defaults = GridSpec::default();
    let grid = GridSpec {
        mu_values: args.mu_values.clone().unwrap_or(defaults.mu_values),
        c_values: args.c_values.clone().unwrap_or(defaults.c_values),
        gamma_values: args.gamma_values.clone().unwrap_or(defaults.gamma_values),
        a_values: args.a_values.clone().unwrap_or(defaults.a_values),
    };
    let train_set = load(&args.train)?;
    let validation = load(&args.validation)?;
    let options = args.fit.resolve();
    let eval = EvalOptions {
        threshold: 0.0,
        jobs: args.jobs.max(1),
    };
    let cells = grid.cells(template.variant, template.kernel, &template).len();
    info!("searching {cells} grid cells");
    let result = grid_search(&train_set, &validation, &grid, &template, &options, &eval)?;
    print!("{}", result.to_table());
    let b = &result.best;
    println!(
        "best: variant={} mu={} C={} a={} kernel={} auc={:.6}",
        b.variant, b.mu, b.c, b.a, b.kernel, result.best_auc
    );
    if let Some(path) = &args.report {
        fs::write(path, result.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.best_model {
        let model = train(&train_set, b, &options)?;
        save_model(&model, path).with_context(|| format!("writing {}", path.display()))?;
        println!("best model written to {}", path.display());
    }
    Ok(())
}

/// Parse a flat `key=value` file into `(flag, value)` pairs. `#` starts a
/// comment; booleans accept true/false.
fn config_flags(path: &Path) -> anyhow::Result<Vec<(String, Option<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        let key = key.trim().replace('_', "-");
        let flag = match key.as_str() {
            "c" | "C" => "--C".to_string(),
            "c-values" | "C-values" => "--C-values".to_string(),
            k => format!("--{k}"),
        };
        match value.trim() {
            "true" => flags.push((flag, None)),
            "false" => {}
            v => flags.push((flag, Some(v.to_string()))),
        }
    }
    Ok(flags)
}

/// Splice config-file flags right after the subcommand name, skipping any flag
/// also given on the command line so that explicit flags win.
fn expand_config(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else { return Ok(args) };
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--config" {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            break;
        }
    }
    if i >= args.len() {
        return Ok(args);
    }
    let given: Vec<String> = args[i + 1..]
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            s.starts_with("--").then(|| s.split('=').next().unwrap_or("").to_string())
        })
        .collect();
    let mut out = args[..=i].to_vec();
    for (flag, value) in config_flags(&path)? {
        if given.contains(&flag) {
            continue;
        }
        out.push(flag.into());
        out.extend(value.map(OsString::from));
    }
    out.extend_from_slice(&args[i + 1..]);
    Ok(out)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    info!("resolved configuration: {:?}", cli.command);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let user_fault = err.chain().any(|e| {
        e.is::<UsageError>() || e.is::<mtl_rank::Error>() || e.is::<io::Error>()
    });
    if user_fault {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
