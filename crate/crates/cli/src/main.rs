//! `doma` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage, I/O or numerical errors, 2 when
//! `fit` stops at the iteration cap without meeting the stop rule.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use doma::io as csvio;
use doma::synth::{summarize, ExperimentGrid, GridCell, InitKind};
use doma::tropical::DEFAULT_TOL;
use doma::{
    compress, fit, generalization_gap, initialize, relative_param_error, test_nmse, CandidateScale, Dataset, DomaModel,
    FitConfig, InitConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "doma", version, about = "Difference-of-max-affine regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset (x1,...,xd,y).
    Fit(FitArgs),
    /// Run the randomized spectral initializer only.
    Init(InitArgs),
    /// Evaluate a model on covariate rows, writing a y_hat column.
    Predict(PredictArgs),
    /// Drop blocks inside the convex hull of the other blocks of their part.
    Compress(CompressArgs),
    /// Compare an estimate with a ground-truth model.
    Eval(EvalArgs),
    /// Run a seeded Monte Carlo grid and write one CSV row per trial.
    Simulate(SimulateArgs),
    /// Per-cell medians of a trial table.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct InitOptions {
    /// Number of random candidates.
    #[arg(long = "T", default_value_t = 100)]
    t_candidates: usize,
    /// ABGD sweeps applied to every candidate.
    #[arg(long, default_value_t = 5)]
    refine_sweeps: usize,
    /// Candidate scale: `auto` (target standard deviation) or a number.
    #[arg(long, default_value = "auto")]
    scale: CandidateScale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InitOptions {
    fn config(&self) -> InitConfig {
        InitConfig {
            t_candidates: self.t_candidates,
            refine_sweeps: self.refine_sweeps,
            scale: self.scale,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Start from this model instead of running the initializer.
    #[arg(long)]
    init_model: Option<PathBuf>,
    #[command(flatten)]
    init: InitOptions,
    #[arg(long, default_value_t = FitConfig::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iters)]
    max_iters: usize,
    /// Record the per-sweep loss in the report.
    #[arg(long)]
    trace: bool,
    /// Model JSON output path (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report JSON output path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k1: usize,
    #[arg(long)]
    k2: usize,
    #[command(flatten)]
    init: InitOptions,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate CSV with header x1,...,xd.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Also write the compressed model alone to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Test CSV (x1,...,xd,y) for the normalized test error.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Monte Carlo draws for the generalization gap (0 skips it).
    #[arg(long, default_value_t = 10_000)]
    mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid config (TOML, or JSON when the extension is `.json`).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Override the number of trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the grid's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma_z: Option<Vec<f64>>,
    /// Override the initialization (`oracle_perturbation` or `spectral`).
    #[arg(long)]
    init_kind: Option<InitKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trial table written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_model(path: &Path) -> Result<DomaModel> {
    serde_json::from_reader(open(path)?).with_context(|| format!("invalid model in {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    csvio::read_dataset(open(path)?).with_context(|| format!("invalid dataset in {}", path.display()))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// The adaptive step can overshoot when covariates are far from unit scale.
fn warn_if_unstandardized(data: &Dataset) {
    if data.n() < 2 {
        return;
    }
    let n = data.n() as f64;
    for c in 0..data.d() {
        let mean = data.rows().map(|x| x[c]).sum::<f64>() / n;
        let sd = (data.rows().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if mean.abs() > 0.5 || !(0.5..=1.5).contains(&sd) {
            log::warn!(
                "covariate x{} has mean {mean:.2} and standard deviation {sd:.2}; \
                 fitting assumes roughly standardized covariates",
                c + 1
            );
        }
    }
}

fn fit_command(args: FitArgs) -> Result<ExitCode> {
    let data = read_dataset(&args.data)?;
    warn_if_unstandardized(&data);
    let init = match &args.init_model {
        Some(path) => read_model(path)?,
        None => {
            let (Some(k1), Some(k2)) = (args.k1, args.k2) else {
                bail!("--k1 and --k2 are required unless --init-model is given");
            };
            initialize(&data, k1, k2, &args.init.config())?
        }
    };
    let config = FitConfig { gamma: args.gamma, max_iters: args.max_iters, record_trace: args.trace };
    let report = fit(&data, &init, &config)?;
    write_json(args.out.as_deref(), &report.model)?;
    let report_path = args.report.clone().or_else(|| args.out.as_ref().map(|p| p.with_extension("report.json")));
    if let Some(path) = report_path {
        write_json(Some(&path), &report)?;
    }
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        log::warn!("stopped after {} sweeps without meeting the stop rule", report.iterations);
        ExitCode::from(2)
    })
}

fn init_command(args: InitArgs) -> Result<ExitCode> {
    let data = read_dataset(&args.data)?;
    let model = initialize(&data, args.k1, args.k2, &args.init.config())?;
    write_json(args.out.as_deref(), &model)?;
    Ok(ExitCode::SUCCESS)
}

fn predict_command(args: PredictArgs) -> Result<ExitCode> {
    let model = read_model(&args.model)?;
    let (d, rows) = csvio::read_covariates(open(&args.data)?)
        .with_context(|| format!("invalid covariates in {}", args.data.display()))?;
    if d != model.d() {
        bail!("{} has {d} covariate columns but the model expects {}", args.data.display(), model.d());
    }
    let y_hat = rows.iter().map(|x| model.evaluate(x)).collect::<doma::Result<Vec<f64>>>()?;
    let mut out = output(args.out.as_deref())?;
    csvio::write_predictions(&mut out, &y_hat)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn compress_command(args: CompressArgs) -> Result<ExitCode> {
    let model = read_model(&args.model)?;
    let report = compress(&model, args.tol)?;
    if let Some(path) = &args.out {
        write_json(Some(path), &report.model)?;
    }
    write_json(None, &report)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalReport {
    rel_error: f64,
    nmse: Option<f64>,
    generalization_gap: Option<f64>,
}

fn eval_command(args: EvalArgs) -> Result<ExitCode> {
    let model = read_model(&args.model)?;
    let truth = read_model(&args.truth)?;
    let rel_error = relative_param_error(&model, &truth)?;
    let nmse = match &args.data {
        Some(path) => Some(test_nmse(&model, &read_dataset(path)?)?),
        None => None,
    };
    let generalization_gap = if args.mc > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        Some(generalization_gap(&model, &truth, args.mc, &mut rng)?)
    } else {
        None
    };
    write_json(args.out.as_deref(), &EvalReport { rel_error, nmse, generalization_gap })?;
    Ok(ExitCode::SUCCESS)
}

fn read_grid(path: &Path) -> Result<ExperimentGrid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    let grid = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid grid config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid grid config {}", path.display()))?
    };
    Ok(grid)
}

fn simulate_command(args: SimulateArgs) -> Result<ExitCode> {
    let mut grid = match &args.grid {
        Some(path) => read_grid(path)?,
        None => ExperimentGrid::default(),
    };
    if let Some(t) = args.trials {
        grid.trials_per_cell = t;
    }
    if let Some(s) = args.seed {
        grid.base_seed = s;
    }
    if let Some(sigmas) = args.sigma_z {
        // Explicit cells are repeated once per requested noise level.
        let mut cells: Vec<GridCell> = Vec::new();
        for cell in &grid.cells {
            for &sigma_z in &sigmas {
                let c = GridCell { sigma_z, ..*cell };
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
        grid.cells = cells;
        grid.sigma_z = sigmas;
    }
    if let Some(kind) = args.init_kind {
        grid.init_kind = kind;
    }
    let records = grid.run()?;
    let mut out = output(args.out.as_deref())?;
    csvio::write_records(&mut out, &records)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn summarize_command(args: SummarizeArgs) -> Result<ExitCode> {
    let records = csvio::read_records(open(&args.input)?)
        .with_context(|| format!("invalid trial table {}", args.input.display()))?;
    let mut out = output(args.out.as_deref())?;
    csvio::write_summary(&mut out, &summarize(&records))?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit_command(a),
        Command::Init(a) => init_command(a),
        Command::Predict(a) => predict_command(a),
        Command::Compress(a) => compress_command(a),
        Command::Eval(a) => eval_command(a),
        Command::Simulate(a) => simulate_command(a),
        Command::Summarize(a) => summarize_command(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
