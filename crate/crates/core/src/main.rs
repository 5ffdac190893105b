use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mdbd::dynamics::Algorithm;
use mdbd::harness::artifacts::{read_json, write_json, write_text, INSTANCE_FILE, SADDLE_FILE};
use mdbd::harness::bench::{all_algorithms, BenchConfig};
use mdbd::harness::{cmd_bench, cmd_gen, cmd_run, cmd_verify, ExperimentConfig, InstanceDoc, SaddleDoc};
use mdbd::integrator::{RunStatus, Scheme};
use mdbd::oracle::OracleConfig;
use mdbd::problem::WeightStructure;
use mdbd::qp::ProjectionMode;
use mdbd::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mdbd", version, about = "Mirror-descent dynamics with Bregman damping: runs, benchmarks, checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance, optionally solve for a reference saddle, integrate, write artifacts.
    Run(RunArgs),
    /// Generate an instance and write instance.json only.
    Gen(RunArgs),
    /// Re-check an instance and saddle point from their files.
    Verify(VerifyArgs),
    /// Time algorithms across dimensions.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Mdbd,
    Projection,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fast,
    GenericQp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Dense,
    Diagonal,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    /// Number of agents.
    #[arg(long = "N")]
    n_agents: Option<usize>,
    /// Dimension per agent.
    #[arg(long = "n")]
    dim: Option<usize>,
    #[arg(long)]
    eq_rows: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
    /// Integration step.
    #[arg(long)]
    h: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    projection_mode: Option<ModeArg>,
    /// Solve for a reference saddle point.
    #[arg(long, conflicts_with = "no_oracle")]
    oracle: bool,
    #[arg(long)]
    no_oracle: bool,
    /// Skip trajectory.csv.
    #[arg(long)]
    no_trajectory: bool,
    /// Output directory (overrides MDBD_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// instance.json, or a run directory holding instance.json and saddle.json.
    path: PathBuf,
    /// saddle.json; defaults to the one next to the instance, if present.
    saddle: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Ascending dimensions per agent.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 64, 256, 1024])]
    dims: Vec<usize>,
    #[arg(long = "N")]
    n_agents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "diagonal")]
    weights: WeightsArg,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Per-cell wall-time budget in seconds.
    #[arg(long)]
    limit: Option<f64>,
    /// Only per-step timings; no oracle solves.
    #[arg(long)]
    per_step_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn experiment(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let f = &mut cfg.family;
    if let Some(v) = &args.family {
        f.tag = v.clone();
    }
    if let Some(v) = args.n_agents {
        f.n_agents = v;
    }
    if let Some(v) = args.dim {
        f.dim = v;
    }
    if let Some(v) = args.eq_rows {
        f.eq_rows = v;
    }
    if let Some(v) = args.seed {
        f.seed = v;
    }
    if let Some(w) = args.weights {
        f.weight_structure = weights(w);
    }
    let i = &mut cfg.integrator;
    if let Some(v) = args.h {
        i.step = v;
    }
    if let Some(v) = args.horizon {
        i.horizon = v;
    }
    if let Some(v) = args.scheme {
        i.scheme = match v {
            SchemeArg::Euler => Scheme::ExplicitEuler,
            SchemeArg::Rk4 => Scheme::RungeKutta4,
        };
    }
    if let Some(v) = args.record_every {
        i.record_every = v;
    }
    let mode = args.projection_mode.map(|m| match m {
        ModeArg::Fast => ProjectionMode::Fast,
        ModeArg::GenericQp => ProjectionMode::GenericQp,
    });
    match (args.algorithm, mode) {
        (Some(AlgorithmArg::Mdbd), Some(_)) => {
            return Err(Error::Config {
                field: "--projection-mode".into(),
                message: "only applies to --algorithm projection".into(),
            })
        }
        (Some(AlgorithmArg::Mdbd), None) => cfg.algorithm = Algorithm::Mdbd,
        (Some(AlgorithmArg::Projection), m) => {
            cfg.algorithm = Algorithm::Projection {
                projection_mode: m.unwrap_or_default(),
            }
        }
        (None, Some(m)) => match &mut cfg.algorithm {
            Algorithm::Projection { projection_mode } => *projection_mode = m,
            Algorithm::Mdbd => {
                return Err(Error::Config {
                    field: "--projection-mode".into(),
                    message: "only applies to --algorithm projection".into(),
                })
            }
        },
        (None, None) => {}
    }
    if args.oracle && cfg.oracle.is_none() {
        cfg.oracle = Some(OracleConfig::default());
    }
    if args.no_oracle {
        cfg.oracle = None;
    }
    if args.no_trajectory {
        cfg.output.trajectory = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn weights(w: WeightsArg) -> WeightStructure {
    match w {
        WeightsArg::Dense => WeightStructure::Dense,
        WeightsArg::Diagonal => WeightStructure::Diagonal,
    }
}

fn fail(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } => {
            eprintln!("usage error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(args: &RunArgs) -> Result<ExitCode, Error> {
    let cfg = experiment(args)?;
    let out = cfg.out_dir(args.out.as_deref());
    let outcome = cmd_run(&cfg, &out)?;
    let s = &outcome.summary;
    let f = &s.final_residuals;
    println!("algorithm {} seed {} config {}", s.algorithm, s.seed, s.config_hash);
    println!(
        "t {} eq_residual {:.3e} ineq_violation {:.3e} kkt_residual {:.3e}",
        f.t, f.eq_residual, f.ineq_violation, f.kkt_residual
    );
    if let Some(e) = f.x_error {
        println!("x_error {e:.3e} gap {:.3e}", f.gap.unwrap_or(f64::NAN));
    }
    println!("artifacts in {}", out.display());
    if let RunStatus::Diverged { step, time, reason } = &s.status {
        eprintln!("DIVERGED at step {step} (t = {time}): {reason}");
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(args: &RunArgs) -> Result<ExitCode, Error> {
    let cfg = experiment(args)?;
    let out = cfg.out_dir(args.out.as_deref());
    let doc = cmd_gen(&cfg, &out)?;
    println!(
        "{} agents, slack {:?}, written to {}",
        doc.agents.len(),
        doc.slater.slack,
        out.join(INSTANCE_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(args: &VerifyArgs) -> Result<ExitCode, Error> {
    let (instance_path, default_saddle) = if args.path.is_dir() {
        (args.path.join(INSTANCE_FILE), args.path.join(SADDLE_FILE))
    } else {
        let dir = args.path.parent().unwrap_or(Path::new("."));
        (args.path.clone(), dir.join(SADDLE_FILE))
    };
    let instance: InstanceDoc = read_json(&instance_path)?;
    let saddle_path = args.saddle.clone().or_else(|| default_saddle.exists().then_some(default_saddle));
    let saddle: Option<SaddleDoc> = saddle_path.as_deref().map(read_json).transpose()?;
    let report = cmd_verify(&instance, saddle.as_ref());
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    })
}

fn bench(args: &BenchArgs) -> Result<ExitCode, Error> {
    let mut cfg = BenchConfig {
        dims: args.dims.clone(),
        algorithms: all_algorithms(),
        per_step_only: args.per_step_only,
        ..BenchConfig::default()
    };
    cfg.family.weight_structure = weights(args.weights);
    if let Some(v) = args.n_agents {
        cfg.family.n_agents = v;
    }
    if let Some(v) = args.seed {
        cfg.family.seed = v;
    }
    if let Some(v) = args.h {
        cfg.step = v;
    }
    if let Some(v) = args.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = args.limit {
        cfg.limit_s = v;
    }
    let report = cmd_bench(&cfg, |c| {
        let per_step = c.per_step.seconds().map_or(">LIMIT".into(), |s| format!("{:.2} us", s * 1e6));
        eprintln!("n {:>5} {:<22} per step {per_step}", c.n, c.algorithm);
    })?;
    let hash = cfg.hash();
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(mdbd::harness::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let csv = report.to_csv(&hash);
    write_text(&out.join("bench.csv"), &csv)?;
    write_json(&out.join("bench.json"), &report)?;
    print!("{csv}");
    for (alg, e) in &report.per_step_exponents {
        if let Some(e) = e {
            println!("# per-step exponent {alg}: {e:.3}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Gen(a) => gen(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    };
    result.unwrap_or_else(|e| fail(&e))
}
