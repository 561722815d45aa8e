use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mte_core::data::ColumnConfig;
use mte_core::pipeline::{Procedure, SecondStep};
use mte_core::run::{self, RunConfig};
use mte_core::simulate::{DgpSpec, PRESETS};
use mte_core::smoothing::{BandwidthSpec, Kernel};
use mte_core::{MteError, Result};

/// Marginal treatment effects identified by nonlinearity of the propensity score.
#[derive(Parser)]
#[command(name = "mte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate coefficients, MTE curves and causal parameters.
    Estimate(RunArgs),
    /// Check the nonlinearity conditions on the propensity score.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        /// Exit with code 4 when no nonlinearity condition is detected.
        #[arg(long)]
        strict: bool,
        /// Discrete covariate values of the cell to examine, comma separated.
        #[arg(long, value_delimiter = ',')]
        cell: Option<Vec<String>>,
    },
    /// Draw a sample from a simulation design.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Separate,
    Liv,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SecondStepArg {
    Semiparametric,
    Normal,
    Polynomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Epanechnikov,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => Kernel::Gaussian,
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    continuous: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    discrete: Option<Vec<String>>,
    #[arg(long, value_enum)]
    procedure: Option<ProcedureArg>,
    #[arg(long, value_enum)]
    second_step: Option<SecondStepArg>,
    /// Order J of a parametric second step.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long)]
    trim_lower: Option<f64>,
    #[arg(long)]
    trim_upper: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, value_enum)]
    first_step_kernel: Option<KernelArg>,
    /// Fixed first-step bandwidth for every continuous covariate.
    #[arg(long)]
    first_step_bandwidth: Option<f64>,
    /// Fixed pairwise-difference bandwidth.
    #[arg(long)]
    pair_bandwidth: Option<f64>,
    /// Fixed local-linear bandwidth.
    #[arg(long)]
    local_bandwidth: Option<f64>,
    /// Covariate profile for the MTE curve, in design order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    profile: Option<Vec<f64>>,
    #[arg(long)]
    pi_x: Option<f64>,
    /// Bootstrap replications (0 disables).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    no_diagnostics: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in design.
    #[arg(long, default_value = "separable")]
    preset: String,
    /// JSON design; replaces the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => {
                let (Some(input), Some(outcome), Some(treatment)) = (&self.input, &self.outcome, &self.treatment)
                else {
                    return Err(MteError::Config(
                        "either --config or all of --input, --outcome and --treatment are required".into(),
                    ));
                };
                let mut cfg = RunConfig::new(input, ColumnConfig::new(outcome, treatment, &[], &[]), "mte-output");
                cfg.columns.continuous = self.continuous.clone().unwrap_or_default();
                cfg.columns.discrete = self.discrete.clone().unwrap_or_default();
                cfg
            }
        };
        if let Some(v) = self.input {
            cfg.input = v;
        }
        if let Some(v) = self.outcome {
            cfg.columns.outcome = v;
        }
        if let Some(v) = self.treatment {
            cfg.columns.treatment = v;
        }
        if let Some(v) = self.continuous {
            cfg.columns.continuous = v;
        }
        if let Some(v) = self.discrete {
            cfg.columns.discrete = v;
        }
        let est = &mut cfg.estimation;
        if let Some(p) = self.procedure {
            est.procedure = match p {
                ProcedureArg::Separate => Procedure::Separate,
                ProcedureArg::Liv => Procedure::Liv,
                ProcedureArg::Both => Procedure::Both,
            };
        }
        if let Some(s) = self.second_step {
            est.second_step = match s {
                SecondStepArg::Semiparametric => SecondStep::Semiparametric,
                SecondStepArg::Normal => SecondStep::Normal { order: self.order },
                SecondStepArg::Polynomial => SecondStep::Polynomial { order: self.order },
            };
        }
        if let Some(v) = self.trim_lower {
            est.trim_lower = v;
        }
        if let Some(v) = self.trim_upper {
            est.trim_upper = v;
        }
        if let Some(v) = self.grid_points {
            est.smoothing.grid_points = v;
        }
        if let Some(k) = self.first_step_kernel {
            est.propensity.kernel = k.into();
        }
        if let Some(h) = self.first_step_bandwidth {
            est.propensity.bandwidth = BandwidthSpec::Fixed(h);
        }
        if let Some(h) = self.pair_bandwidth {
            est.smoothing.pair_bandwidth = BandwidthSpec::Fixed(h);
        }
        if let Some(h) = self.local_bandwidth {
            est.smoothing.local_bandwidth = BandwidthSpec::Fixed(h);
        }
        if self.profile.is_some() {
            est.profile = self.profile;
        }
        if self.pi_x.is_some() {
            est.pi_x = self.pi_x;
        }
        if let Some(v) = self.bootstrap {
            cfg.bootstrap = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.level {
            cfg.level = v;
        }
        if let Some(v) = self.output {
            cfg.output = v;
        }
        if self.no_diagnostics {
            cfg.diagnostics.enabled = false;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| MteError::Config(format!("cannot set up {t} threads: {e}")))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Estimate(args) => {
            let cfg = args.resolve()?;
            init_threads(cfg.threads)?;
            let out = run::estimate(&cfg)?;
            let coefficients = cfg.output.join("coefficients.txt");
            if coefficients.exists() {
                print!("{}", std::fs::read_to_string(coefficients)?);
            } else {
                print!("{}", std::fs::read_to_string(cfg.output.join("coefficients_liv.txt"))?);
            }
            eprintln!("wrote {} files to {}", out.files.len(), cfg.output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { run: args, strict, cell } => {
            let mut cfg = args.resolve()?;
            cfg.diagnostics.strict |= strict;
            if cell.is_some() {
                cfg.diagnostics.cell = cell;
            }
            init_threads(cfg.threads)?;
            let report = run::diagnose_only(&cfg)?;
            print!("{}", mte_core::output::diagnostics_text(&report));
            if cfg.diagnostics.strict && !report.identified {
                return Ok(ExitCode::from(4));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            let mut spec = match &args.spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str::<DgpSpec>(&text)
                        .map_err(|e| MteError::Config(format!("{}: {e}", path.display())))?
                }
                None => DgpSpec::preset(&args.preset, 1000, 1)?,
            };
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            run::simulate(&spec, &args.output)?;
            eprintln!("wrote sample.csv and oracle.json to {}", args.output.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            eprintln!("hint: {}", e.hint());
            if let MteError::Config(msg) = &e {
                if msg.contains("unknown preset") {
                    eprintln!("presets: {}", PRESETS.join(", "));
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
