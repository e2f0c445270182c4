//! Subcommand definitions and dispatch.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfbo::acquisition::McConfig;
use cfbo::engine::{self, BOOptions, BOTrace};
use cfbo::error::Error;
use cfbo::evaluation::{self, RunRecord, SynthSpec};
use cfbo::lc_data::{self, LCTask, TaskFormat};
use cfbo::stopping::StopConfig;
use cfbo::surrogate::SurrogateOptions;
use cfbo::utility::{self, FitOptions, PrefSampler, UtilityFn, UtilityTerm};

/// Exit codes: 0 success, 2 usage error (via clap), 3 data error, 4 numeric
/// failure.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_data_error() {
        3
    } else {
        4
    }
}

#[derive(Parser)]
#[command(name = "cfbo", version, about = "Cost-sensitive freeze-thaw Bayesian optimization")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run BO (or the random baseline) on benchmark tasks.
    Run(RunArgs),
    /// Fit a utility function to pairwise preference data.
    FitUtility(FitUtilityArgs),
    /// Simulate labeled preference pairs from a known utility.
    SimulatePrefs(SimulatePrefsArgs),
    /// Score finished traces by normalized regret and aggregate.
    Eval(EvalArgs),
    /// Generate a synthetic learning-curve benchmark.
    GenSynth(GenSynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Adaptive-threshold CFBO.
    Cfbo,
    /// CFBO with the fixed regret threshold.
    CfboFixedThreshold,
    /// Random search baseline (no stopping).
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark task file(s) (.csv or .json).
    #[arg(long = "task", required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,

    #[arg(long, value_enum, default_value = "cfbo")]
    method: Method,

    /// Utility spec JSON; defaults to a single power term from --alpha/--c.
    #[arg(long)]
    utility: Option<PathBuf>,

    /// Penalty coefficient of the inline power utility.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,

    /// Exponent of the inline power utility (1 linear, 2 quadratic, 0.5 square root).
    #[arg(long, default_value_t = 1.0)]
    c: f64,

    /// Total budget B in epochs.
    #[arg(long, default_value_t = 300)]
    budget: u32,

    /// Fixed stopping threshold (used by cfbo-fixed-threshold).
    #[arg(long, default_value_t = 0.2)]
    delta: f64,

    /// Beta shape of the adaptive threshold; default exp(-1).
    #[arg(long, default_value_t = 0.367_879_441_171_442_33)]
    beta: f64,

    /// Exponent of the adaptive threshold; default log_0.5(0.2) so the
    /// threshold is 0.2 at p = 0.5.
    #[arg(long, default_value_t = 2.321_928_094_887_362)]
    gamma: f64,

    /// Raw Monte-Carlo curve samples per candidate.
    #[arg(long, default_value_t = 5000)]
    raw_samples: usize,

    /// Variance-reduction group size (effective samples = raw / group).
    #[arg(long, default_value_t = 5)]
    group_size: usize,

    /// Comma-separated seeds, one run per (task, seed).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,

    /// Output directory for trace files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitUtilityArgs {
    /// Preference CSV (b,y,b2,y2,label).
    #[arg(long)]
    prefs: PathBuf,

    /// Functional family to fit.
    #[arg(long, value_enum, default_value = "linear")]
    family: Family,

    /// Budget horizon B of the fitted utility.
    #[arg(long, default_value_t = 300)]
    budget: u32,

    /// Staircase edges for the combo family (comma-separated budgets).
    #[arg(long, value_delimiter = ',')]
    staircase_edges: Option<Vec<u32>>,

    #[arg(long, default_value_t = 1000)]
    iters: usize,

    #[arg(long, default_value_t = 0.05)]
    step: f64,

    /// Bradley-Terry temperature.
    #[arg(long, default_value_t = 0.05)]
    tau: f64,

    /// Output utility JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// Single power term, c = 1.
    Linear,
    /// Single power term, c = 2.
    Quadratic,
    /// Single power term, c = 0.5.
    Sqrt,
    /// Weighted linear + quadratic + square-root + staircase.
    Combo,
}

#[derive(Args)]
struct SimulatePrefsArgs {
    /// Ground-truth utility spec JSON.
    #[arg(long)]
    utility: PathBuf,

    #[arg(long, value_enum, default_value = "uniform")]
    mode: PrefMode,

    /// Trace file supplying the incumbent trajectory (trajectory mode).
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Number of pairs to emit.
    #[arg(long, default_value_t = 30)]
    n: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output preference CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrefMode {
    /// Uniform draws filtered to genuine trade-offs.
    Uniform,
    /// Above/below samples along a finished run's incumbent trajectory.
    Trajectory,
}

#[derive(Args)]
struct EvalArgs {
    /// Utility spec JSON used for scoring.
    #[arg(long)]
    utility: PathBuf,

    /// Benchmark task file(s); traces are matched by task name.
    #[arg(long = "task", required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,

    /// Output prefix; writes <prefix>_runs.csv, <prefix>_summary.csv,
    /// <prefix>_rank.csv.
    #[arg(long)]
    out: PathBuf,

    /// Trace files to score.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value = "synth")]
    name: String,

    /// Number of configurations.
    #[arg(long, default_value_t = 100)]
    n: usize,

    /// Epochs per curve.
    #[arg(long, default_value_t = 50)]
    t: usize,

    /// Configuration dimension.
    #[arg(long, default_value_t = 3)]
    dx: usize,

    /// Curve scale parameter.
    #[arg(long, default_value_t = 0.4)]
    a: f64,

    /// Curve decay exponent.
    #[arg(long, default_value_t = 0.75)]
    beta_c: f64,

    /// Observation noise std.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, value_enum, default_value = "csv")]
    format: FileFormat,

    /// Output task file path.
    #[arg(long)]
    out: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::FitUtility(args) => cmd_fit_utility(args),
        Command::SimulatePrefs(args) => cmd_simulate_prefs(args),
        Command::Eval(args) => cmd_eval(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
    }
}

fn load_task_auto(path: &Path) -> Result<LCTask, Error> {
    let format = TaskFormat::from_path(path)?;
    lc_data::load_task(path, format)
}

/// Writes via a temp file in the same directory, then renames into place.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    std::fs::write(&tmp, contents).map_err(|e| Error::Io {
        path: tmp.display().to_string(),
        source: e,
    })?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("CFBO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let utility = match &args.utility {
        Some(path) => {
            let u = UtilityFn::from_json_file(path)?;
            if u.budget_cap != args.budget {
                return Err(Error::Mismatch(format!(
                    "utility spec has B={} but --budget is {}",
                    u.budget_cap, args.budget
                )));
            }
            u
        }
        None => UtilityFn::power(args.budget, args.c, args.alpha)?,
    };
    let stop = match args.method {
        Method::Cfbo => Some(StopConfig::Adaptive {
            beta: args.beta,
            gamma: args.gamma,
        }),
        Method::CfboFixedThreshold => Some(StopConfig::Fixed { delta: args.delta }),
        Method::Random => None,
    };
    if let Some(s) = &stop {
        s.validate()?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;

    let tasks: Vec<LCTask> = args
        .tasks
        .iter()
        .map(|p| load_task_auto(p))
        .collect::<Result<_, _>>()?;

    struct Job<'a> {
        task: &'a LCTask,
        seed: u64,
    }
    let jobs: Vec<Job> = tasks
        .iter()
        .flat_map(|task| args.seeds.iter().map(move |&seed| Job { task, seed }))
        .collect();

    let next = Mutex::new(0usize);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = worker_count(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().expect("job counter poisoned");
                    let idx = *guard;
                    if idx >= jobs.len() {
                        break;
                    }
                    *guard += 1;
                    idx
                };
                let job = &jobs[idx];
                let opts = BOOptions {
                    budget: args.budget,
                    mc: McConfig {
                        raw_samples: args.raw_samples,
                        group_size: args.group_size,
                    },
                    seed: job.seed,
                    surrogate: SurrogateOptions::default(),
                };
                let outcome = (|| -> Result<(), Error> {
                    let trace = match &stop {
                        Some(cfg) => engine::run(job.task, &utility, cfg, &opts)?,
                        None => engine::run_baseline_random(job.task, &utility, &opts)?,
                    };
                    let file = args.out.join(format!(
                        "{}__{}__seed{}.jsonl",
                        trace.header.task, trace.header.method, job.seed
                    ));
                    write_atomic(&file, &trace.to_jsonl())?;
                    let last = trace.steps.last();
                    println!(
                        "task={} seed={} stop_step={} y_best={} u_p={} -> {}",
                        trace.header.task,
                        job.seed,
                        trace.stop_step(),
                        last.map_or(f64::NAN, |s| s.incumbent),
                        last.map_or(f64::NAN, |s| s.utility),
                        file.display()
                    );
                    Ok(())
                })();
                if let Err(e) = outcome {
                    eprintln!("run on {} seed {} failed: {e}", job.task.name(), job.seed);
                    first_error.lock().expect("error slot poisoned").get_or_insert(e);
                }
            });
        }
    });

    match first_error.into_inner().expect("error slot poisoned") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_fit_utility(args: FitUtilityArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.prefs).map_err(|e| Error::Io {
        path: args.prefs.display().to_string(),
        source: e,
    })?;
    let data = utility::prefs_from_csv(&text, &args.prefs.display().to_string())?;

    let family = match args.family {
        Family::Linear => UtilityFn::power(args.budget, 1.0, 0.0)?,
        Family::Quadratic => UtilityFn::power(args.budget, 2.0, 0.0)?,
        Family::Sqrt => UtilityFn::power(args.budget, 0.5, 0.0)?,
        Family::Combo => {
            let edges = args.staircase_edges.clone().unwrap_or_else(|| {
                vec![args.budget / 4, args.budget / 2, 3 * args.budget / 4]
            });
            let n_alphas = edges.len() + 1;
            UtilityFn::new(
                args.budget,
                vec![
                    UtilityTerm::Power { c: 1.0, alpha: 0.0 },
                    UtilityTerm::Power { c: 2.0, alpha: 0.0 },
                    UtilityTerm::Power { c: 0.5, alpha: 0.0 },
                    UtilityTerm::Staircase {
                        edges,
                        alphas: vec![0.0; n_alphas],
                    },
                ],
                vec![0.25; 4],
            )?
        }
    };
    let opts = FitOptions {
        iters: args.iters,
        step_size: args.step,
        tau: args.tau,
    };
    let fit = utility::fit_utility(&data, &family, &opts)?;
    write_atomic(&args.out, &fit.utility.to_json_string())?;
    println!(
        "fitted {} pairs, final bce loss = {} -> {}",
        data.len(),
        fit.final_loss(),
        args.out.display()
    );
    Ok(())
}

fn cmd_simulate_prefs(args: SimulatePrefsArgs) -> Result<(), Error> {
    let utility = UtilityFn::from_json_file(&args.utility)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pairs = match args.mode {
        PrefMode::Uniform => {
            utility::simulate_preferences(&utility, PrefSampler::UniformMeaningful, args.n, &mut rng)?
        }
        PrefMode::Trajectory => {
            let path = args.trace.as_ref().ok_or_else(|| {
                Error::Domain("--trace is required with --mode trajectory".into())
            })?;
            let trace = BOTrace::read_file(path)?;
            let incumbents = trace.incumbents();
            utility::simulate_preferences(
                &utility,
                PrefSampler::AroundTrajectory {
                    incumbents: &incumbents,
                },
                args.n,
                &mut rng,
            )?
        }
    };
    write_atomic(&args.out, &utility::prefs_to_csv(&pairs))?;
    println!("wrote {} pairs -> {}", pairs.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let utility = UtilityFn::from_json_file(&args.utility)?;
    let tasks: Vec<LCTask> = args
        .tasks
        .iter()
        .map(|p| load_task_auto(p))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    for path in &args.traces {
        let trace = BOTrace::read_file(path)?;
        let task = tasks
            .iter()
            .find(|t| t.name() == trace.header.task)
            .ok_or_else(|| {
                Error::Mismatch(format!(
                    "trace {} references task {:?} which was not supplied",
                    path.display(),
                    trace.header.task
                ))
            })?;
        let regret = evaluation::normalized_regret(task, &utility, &trace)?;
        records.push(RunRecord {
            method: trace.header.method.clone(),
            task: trace.header.task.clone(),
            seed: trace.header.seed,
            regret,
        });
    }
    let report = evaluation::aggregate(&records)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let prefix = args.out.display();
    let runs_path = PathBuf::from(format!("{prefix}_runs.csv"));
    let summary_path = PathBuf::from(format!("{prefix}_summary.csv"));
    let rank_path = PathBuf::from(format!("{prefix}_rank.csv"));
    write_atomic(&runs_path, &report.runs_csv())?;
    write_atomic(&summary_path, &report.summary_csv())?;
    write_atomic(&rank_path, &report.rank_csv())?;
    println!(
        "scored {} traces -> {}, {}, {}",
        records.len(),
        runs_path.display(),
        summary_path.display(),
        rank_path.display()
    );
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        name: args.name.clone(),
        n_configs: args.n,
        epochs: args.t,
        dim: args.dx,
        curve_scale: args.a,
        curve_decay: args.beta_c,
        noise: args.noise,
        seed: args.seed,
    };
    let task = evaluation::gen_synthetic_task(&spec)?;
    let format = match args.format {
        FileFormat::Csv => TaskFormat::Csv,
        FileFormat::Json => TaskFormat::Json,
    };
    let contents = match format {
        TaskFormat::Csv => lc_data::task_to_csv_string(&task),
        TaskFormat::Json => lc_data::task_to_json_string(&task),
    };
    write_atomic(&args.out, &contents)?;
    println!(
        "generated task {} (N={}, T={}, dx={}) -> {}",
        task.name(),
        task.n_configs(),
        task.epochs(),
        task.dim(),
        args.out.display()
    );
    Ok(())
}
