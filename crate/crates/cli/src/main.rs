use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbdgen::schedule::{Algorithm, DEFAULT_BUDGET};
use rbdgen_cli::{
    cmd_bench, cmd_dump_kernel, cmd_dump_schedule, cmd_report, cmd_validate, emit, resolve_model, resolve_models,
    BenchConfig, CliError, KernelFormat, ValidateConfig, DEFAULT_NS,
};

#[derive(Parser)]
#[command(name = "rbdgen", version, about = "Generate, validate and benchmark rigid-body dynamics kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// URDF path, or `builtin:<name>` for a bundled model.
    #[arg(long)]
    urdf: Option<String>,
    /// Algorithm (ID, Minv, FD, gradID, gradFD); repeat or comma-separate.
    #[arg(long = "alg", value_delimiter = ',')]
    algs: Vec<Algorithm>,
    /// Workspace budget in scalar slots.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn algorithms(&self, default: &[Algorithm]) -> Vec<Algorithm> {
        if self.algs.is_empty() {
            default.to_vec()
        } else {
            self.algs.clone()
        }
    }

    fn single(&self) -> Result<Algorithm, CliError> {
        match self.algs.as_slice() {
            [a] => Ok(*a),
            _ => Err(CliError::Usage("exactly one --alg is required".into())),
        }
    }

    fn model(&self) -> Result<rbdgen::urdf::RobotModel, CliError> {
        let spec = self.urdf.as_deref().ok_or_else(|| CliError::Usage("--urdf is required".into()))?;
        resolve_model(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check generated kernels against the reference dynamics. Without
    /// --urdf every bundled model is checked. --out writes a JSON coverage
    /// manifest.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        states: usize,
        /// States that also get a finite-difference gradient check.
        #[arg(long, default_value_t = 3)]
        fd_states: usize,
    },
    /// Time serial and parallel batches and write a latency CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Batch size; repeat or comma-separate.
        #[arg(long = "N", value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Also time reloading inputs and copying outputs.
        #[arg(long)]
        io_sim: bool,
    },
    /// Turn a bench CSV into per-algorithm series files and a scaling table.
    Report {
        csv: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Print a generated kernel as text, portable C or an annotated listing.
    DumpKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "text")]
        format: KernelFormat,
    },
    /// Print the level schedule and workspace layout.
    DumpSchedule {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Validate { common, states, fd_states } => {
            let mut cfg = ValidateConfig::new(resolve_models(common.urdf.as_deref())?);
            cfg.algorithms = common.algorithms(&Algorithm::ALL);
            cfg.states = states;
            cfg.fd_states = fd_states;
            cfg.seed = common.seed;
            cfg.budget = common.budget;
            let report = cmd_validate(&cfg)?;
            print!("{}", report.table());
            if let Some(path) = &common.out {
                let text = serde_json::to_string_pretty(&report.manifest()).expect("manifest serializes");
                emit(&(text + "\n"), Some(path))?;
            }
            Ok(report.passed())
        }
        Command::Bench { common, ns, workers, reps, warmup, io_sim } => {
            let mut cfg = BenchConfig::new(common.model()?);
            cfg.algorithms = common.algorithms(&[Algorithm::GradFd]);
            cfg.ns = if ns.is_empty() { DEFAULT_NS.to_vec() } else { ns };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.reps = reps;
            cfg.warmup = warmup;
            cfg.seed = common.seed;
            cfg.budget = common.budget;
            cfg.io_sim = io_sim;
            cfg.out = common.out.clone();
            let rows = cmd_bench(&cfg)?;
            if cfg.out.is_none() {
                rbdgen::batch::write_csv(&rows, std::io::stdout().lock())
                    .map_err(|source| CliError::Csv { path: "<stdout>".into(), source })?;
            }
            Ok(true)
        }
        Command::Report { csv, out } => {
            let files = cmd_report(&csv, &out)?;
            for p in files.series.iter().chain([&files.scaling]) {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::DumpKernel { common, format } => {
            let text = cmd_dump_kernel(&common.model()?, common.single()?, common.budget, format)?;
            emit(&text, common.out.as_deref())?;
            Ok(true)
        }
        Command::DumpSchedule { common, json } => {
            let text = cmd_dump_schedule(&common.model()?, common.single()?, common.budget, json)?;
            emit(&text, common.out.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
