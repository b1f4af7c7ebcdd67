use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifold_ddm::analysis::{from_csv, to_text_table};
use manifold_ddm::atlas::{make_builtin_atlas, BuiltinAtlas};
use manifold_ddm::config::ExperimentConfig;
use manifold_ddm::ddm::DdmConfig;
use manifold_ddm::experiment::run_experiment;
use manifold_ddm::verify::{self, CheckOutcome};
use manifold_ddm::Error;

#[derive(Parser)]
#[command(name = "manifold-ddm", version, about = "Overlapping-chart Schwarz solver for -Δu + bu = f on manifolds")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an n2 sweep and write tables, dumps and a manifest.
    Run(Box<RunArgs>),
    /// Run the geometric and oracle self-checks.
    Verify(VerifyArgs),
    /// Re-render results CSV files as text tables.
    Table {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifold: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    overlap: Option<String>,
    /// Reaction coefficient override.
    #[arg(long)]
    b: Option<String>,
    /// Comma-separated list, e.g. `10,20`.
    #[arg(long)]
    n2: Option<String>,
    #[arg(long)]
    n1_ratio: Option<String>,
    #[arg(long)]
    cg_tol: Option<String>,
    #[arg(long)]
    max_outer: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    quad_points: Option<String>,
    /// `cell-center` or `quadrature`.
    #[arg(long)]
    coefficients: Option<String>,
    /// `coordinate` or `metric`.
    #[arg(long)]
    norms: Option<String>,
    /// Allow n2 above 80.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    jacobi: bool,
    /// Skip the per-chart solution dumps.
    #[arg(long)]
    no_dump: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs = [
            ("manifold", self.manifold),
            ("s", self.s),
            ("delta", self.delta),
            ("r", self.r),
            ("overlap", self.overlap),
            ("b", self.b),
            ("n2", self.n2),
            ("n1_ratio", self.n1_ratio),
            ("cg_tol", self.cg_tol),
            ("max_outer", self.max_outer),
            ("workers", self.workers),
            ("out", self.out),
            ("quad_points", self.quad_points),
            ("coefficients", self.coefficients),
            ("norms", self.norms),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
        }
        if self.force {
            cfg.force = true;
        }
        if self.jacobi {
            cfg.jacobi = true;
        }
        if self.no_dump {
            cfg.dump = false;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Suite {
    Metric,
    Transitions,
    Pou,
    Oracle,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    /// Restrict the geometric checks to one built-in atlas.
    #[arg(long)]
    manifold: Option<String>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Random overlap points for the metric and transition checks.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Random points for the partition-of-unity checks.
    #[arg(long, default_value_t = 1000)]
    pou_points: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let cfg = args.into_config()?;
    let summary = run_experiment(&cfg, |line| println!("{line}"))?;
    print!("{}", to_text_table(&summary.rows));
    println!("results written to {}", cfg.out.display());
    Ok(summary.oracles_passed())
}

fn verify_all(args: VerifyArgs) -> Result<bool, Error> {
    let names: Vec<&str> = match &args.manifold {
        Some(name) => vec![name.as_str()],
        None => BuiltinAtlas::NAMES.to_vec(),
    };
    let wants = |s: Suite| args.suite == s || args.suite == Suite::All;
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    for name in names {
        let kind = BuiltinAtlas::from_name(name, None, None, None, None).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let atlas = make_builtin_atlas(kind, None)?;
        if wants(Suite::Metric) {
            outcomes.push(verify::metric_compatibility(&atlas, args.points, args.seed));
        }
        if wants(Suite::Transitions) {
            outcomes.push(verify::transition_roundtrips(&atlas, args.points, args.seed));
        }
        if wants(Suite::Pou) {
            outcomes.push(verify::pou_sum(&atlas, args.pou_points, args.seed));
            outcomes.push(verify::pou_subordination(&atlas, args.pou_points, args.seed));
        }
    }
    for outcome in &outcomes {
        println!("{outcome}");
    }
    let mut passed = outcomes.iter().all(|o| o.passed);
    if wants(Suite::Oracle) {
        for n in [8, 16] {
            let report = verify::flat_oracle(0.125, n, &DdmConfig::default())?;
            let outcome = report.outcome();
            println!("{outcome}");
            passed &= outcome.passed;
        }
    }
    Ok(passed)
}

fn table(paths: Vec<PathBuf>) -> Result<bool, Error> {
    for path in paths {
        let text = std::fs::read_to_string(&path)?;
        let rows = from_csv(&text)?;
        print!("{}", to_text_table(&rows));
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Verify(args) => verify_all(args),
        Command::Table { csv } => table(csv),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
