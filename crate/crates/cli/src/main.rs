mod csv_out;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use morap::centralised::{build_centralised, CentralisedMdp, CentralisedOracle};
use morap::engine::{configure_pool, Engine, EngineError, DEFAULT_CAPACITY};
use morap::geometry::NormMatrix;
use morap::logic::{insert_pre_sinks, task_automaton};
use morap::morap::{
    load_instance, pareto_point, simulate, synthesize, Decentralised, MorapError, MorapInstance, ParetoOptions,
    ParetoResult, ResultJson, SupportOracle, DEFAULT_EPS,
};
use morap::oracle::{build_feasibility_lp, solve_lp, OracleError};
use morap::warehouse::{generate_instance, generate_instance_json, WarehouseConfig, WarehouseError};
use serde::Serialize;

use crate::csv_out::write_pareto_csv;

const EXIT_INFEASIBLE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Morap(#[from] MorapError),
    #[error(transparent)]
    Warehouse(#[from] WarehouseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("LP cross-check failed: {0}")]
    Oracle(#[from] OracleError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Morap(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Warehouse(WarehouseError::Morap(e)) if e.is_validation() => EXIT_VALIDATION,
            CliError::Warehouse(WarehouseError::GenerationFailure(_)) => EXIT_VALIDATION,
            _ => EXIT_USAGE,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Parser)]
#[command(
    name = "morap",
    version,
    about = "Random assignment and planning for agent teams with co-safe LTL tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether the thresholds are achievable (stops at the first separating point).
    Verify(SolveArgs),
    /// Run the point-oriented Pareto computation to convergence.
    Pareto(SolveArgs),
    /// Run the Pareto computation and extract a randomized assignment with schedulers.
    Synth {
        #[command(flatten)]
        solve: SolveArgs,
        /// Monte-Carlo episodes for checking the synthesized mixture (0 skips).
        #[arg(long, default_value_t = 0)]
        episodes: usize,
    },
    /// Time one Pareto computation and report model sizes.
    Bench(BenchArgs),
    /// Generate a warehouse instance file.
    GenWarehouse(GenArgs),
    /// Print the automaton of a co-safe formula as JSON.
    ExportDfa {
        /// Formula, e.g. "F (a & F b)".
        #[arg(long, allow_hyphen_values = true)]
        formula: String,
        /// Fail the task after this many steps.
        #[arg(long)]
        deadline: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Agent costs then task probabilities, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    thresholds: String,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// JSON matrix (rows) for the distance norm; identity by default.
    #[arg(long)]
    norm: Option<PathBuf>,
    /// Worker threads; overrides MORAP_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Solve on the joint centralised model instead.
    #[arg(long)]
    centralised: bool,
    /// Cross-check the verdict with the linear program.
    #[arg(long)]
    oracle: bool,
    /// CSV file for the iteration data.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for Monte-Carlo checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Instance file; alternatively --warehouse.
    #[arg(long, conflicts_with = "warehouse", required_unless_present = "warehouse")]
    instance: Option<PathBuf>,
    /// Warehouse configuration JSON.
    #[arg(long)]
    warehouse: Option<PathBuf>,
    /// Defaults to 90% of the balanced supporting point's costs and probability 1.
    #[arg(long, allow_hyphen_values = true)]
    thresholds: Option<String>,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long)]
    workers: Option<usize>,
    /// Also build and solve the centralised model.
    #[arg(long)]
    centralised: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Configuration JSON; the size flags are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    height: usize,
    #[arg(long, default_value_t = 2)]
    agents: usize,
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step bound per task; 0 disables it.
    #[arg(long)]
    deadline: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| io_err(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                // a closed pipe (e.g. `| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}

fn parse_floats(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad threshold {s:?}")))
        })
        .collect()
}

fn engine(workers: Option<usize>) -> Result<Engine, CliError> {
    Ok(Engine::new(configure_pool(workers, 1, DEFAULT_CAPACITY)?))
}

struct Loaded {
    inst: MorapInstance,
    t: Vec<f64>,
    norm: NormMatrix,
}

fn load(args: &SolveArgs) -> Result<Loaded, CliError> {
    let loaded = load_instance(&args.instance)?;
    let inst = loaded.instance;
    let t = inst.thresholds(&parse_floats(&args.thresholds)?)?;
    let norm = match &args.norm {
        Some(p) => {
            let rows: Vec<Vec<f64>> = read_json(p)?;
            NormMatrix::from_rows(&rows).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => loaded.norm.unwrap_or_else(|| NormMatrix::identity(inst.dimension())),
    };
    if norm.dim() != inst.dimension() {
        return Err(CliError::Usage(format!(
            "norm matrix has order {}, need {}",
            norm.dim(),
            inst.dimension()
        )));
    }
    if !(args.eps >= 0.0) {
        return Err(CliError::Usage(format!("eps must be nonnegative, got {}", args.eps)));
    }
    Ok(Loaded { inst, t, norm })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OracleReport {
    lp_feasible: bool,
    agrees: bool,
}

#[derive(Serialize)]
struct SimulationJson {
    episodes: usize,
    mean: Vec<f64>,
    #[serde(rename = "stdErr")]
    std_err: Vec<f64>,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    result: ResultJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationJson>,
}

fn solve(args: &SolveArgs, l: &Loaded, verify: bool) -> Result<ParetoResult, CliError> {
    let opts = ParetoOptions {
        eps: args.eps,
        verify_only: verify,
        ..ParetoOptions::default()
    };
    let central: CentralisedMdp;
    let engine = engine(args.workers)?;
    let mut dec;
    let mut cen;
    let oracle: &mut dyn SupportOracle = if args.centralised {
        central = build_centralised(&l.inst)?;
        log::info!("centralised model has {} states", central.num_states());
        cen = CentralisedOracle::new(&central);
        &mut cen
    } else {
        dec = Decentralised::new(&l.inst, &engine);
        &mut dec
    };
    Ok(pareto_point(oracle, &l.t, &l.norm, &opts)?)
}

fn run_solve(args: &SolveArgs, verb: &str, episodes: usize) -> Result<u8, CliError> {
    let l = load(args)?;
    let result = solve(args, &l, verb == "verify")?;
    log::info!("{} iterations, gap {:.3e}", result.iterations.len(), result.gap());
    if let Some(p) = &args.out {
        let f = File::create(p).map_err(|e| io_err(p, e))?;
        write_pareto_csv(&result, BufWriter::new(f)).map_err(|e| io_err(p, e))?;
    }
    let synthesis = if verb == "synth" {
        Some(synthesize(&result)?)
    } else {
        None
    };
    let simulation = match &synthesis {
        Some(s) if episodes > 0 => {
            let r = simulate(&l.inst, s, episodes, args.seed)?;
            Some(SimulationJson {
                episodes: r.episodes,
                mean: r.mean,
                std_err: r.std_err,
            })
        }
        _ => None,
    };
    let oracle = if args.oracle {
        let lp = solve_lp(&build_feasibility_lp(&l.inst, &l.t))?;
        if lp != result.feasible {
            log::warn!("LP says feasible={lp}, iteration says {}", result.feasible);
        }
        Some(OracleReport {
            lp_feasible: lp,
            agrees: lp == result.feasible,
        })
    } else {
        None
    };
    let report = Report {
        result: ResultJson::new(&result, synthesis.as_ref()),
        oracle,
        simulation,
    };
    emit(&report, None)?;
    let infeasible = !result.feasible && verb != "synth";
    Ok(if infeasible { EXIT_INFEASIBLE } else { 0 })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BenchReport {
    agents: usize,
    distinct_models: usize,
    product_states: usize,
    workers: usize,
    thresholds: Vec<f64>,
    feasible: bool,
    iterations: usize,
    seconds: f64,
    seconds_per_iteration: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    centralised: Option<CentralisedBench>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CentralisedBench {
    states: usize,
    build_seconds: f64,
    feasible: bool,
    iterations: usize,
    seconds_per_iteration: f64,
}

fn run_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let inst = match (&args.instance, &args.warehouse) {
        (Some(p), _) => load_instance(p)?.instance,
        (None, Some(p)) => generate_instance(&read_json::<WarehouseConfig>(p)?)?,
        (None, None) => unreachable!("clap requires one of the inputs"),
    };
    let n = inst.n();
    let engine = engine(args.workers)?;
    let m = NormMatrix::identity(2 * n);
    let opts = ParetoOptions {
        eps: args.eps,
        ..ParetoOptions::default()
    };
    let mut dec = Decentralised::new(&inst, &engine);
    let t = match &args.thresholds {
        Some(text) => inst.thresholds(&parse_floats(text)?)?,
        None => {
            let base = dec.support(&vec![1.0 / (2 * n) as f64; 2 * n])?.r;
            let mut t: Vec<f64> = base[..n].iter().map(|c| 0.9 * c).collect();
            t.extend(std::iter::repeat(1.0).take(n));
            t
        }
    };
    let start = Instant::now();
    let r = pareto_point(&mut dec, &t, &m, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    let centralised = if args.centralised {
        let start = Instant::now();
        let c = build_centralised(&inst)?;
        let build_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let rc = pareto_point(&mut CentralisedOracle::new(&c), &t, &m, &opts)?;
        Some(CentralisedBench {
            states: c.num_states(),
            build_seconds,
            feasible: rc.feasible,
            iterations: rc.iterations.len(),
            seconds_per_iteration: start.elapsed().as_secs_f64() / rc.iterations.len() as f64,
        })
    } else {
        None
    };
    emit(
        &BenchReport {
            agents: n,
            distinct_models: inst.num_models(),
            product_states: inst.total_product_states(),
            workers: engine.config().workers,
            thresholds: t,
            feasible: r.feasible,
            iterations: r.iterations.len(),
            seconds,
            seconds_per_iteration: seconds / r.iterations.len() as f64,
            centralised,
        },
        None,
    )?;
    Ok(0)
}

fn run_gen(args: &GenArgs) -> Result<u8, CliError> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<WarehouseConfig>(p)?,
        None => WarehouseConfig::new(args.width, args.height, args.agents),
    };
    if let Some(s) = args.slip {
        cfg.slip = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.deadline.is_some() {
        cfg.deadline = args.deadline;
    }
    let json = match generate_instance_json(&cfg) {
        Ok(j) => j,
        Err(WarehouseError::InvalidConfig(msg)) => return Err(CliError::Usage(msg)),
        Err(e) => return Err(e.into()),
    };
    emit(&json, args.out.as_deref())?;
    Ok(0)
}

fn run_export(formula: &str, deadline: Option<usize>, out: Option<&Path>) -> Result<u8, CliError> {
    let mut dfa = task_automaton(formula).map_err(MorapError::from)?;
    if let Some(k) = deadline {
        dfa = insert_pre_sinks(dfa.with_deadline(k).map_err(MorapError::from)?);
    }
    emit(&dfa.to_json(), out)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Verify(a) => run_solve(a, "verify", 0),
        Command::Pareto(a) => run_solve(a, "pareto", 0),
        Command::Synth { solve, episodes } => run_solve(solve, "synth", *episodes),
        Command::Bench(a) => run_bench(a),
        Command::GenWarehouse(a) => run_gen(a),
        Command::ExportDfa { formula, deadline, out } => run_export(formula, *deadline, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
