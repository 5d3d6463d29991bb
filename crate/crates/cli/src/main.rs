use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_cli::spec::{validate_spec, Axis, Mode, PolicyKind};
use aoi_cli::sweep::{run_sweep_logged, write_csv, write_samples_csv};
use aoi_cli::{parse_spec, validate, ExperimentSpec, SpecError, ValidateOptions};
use aoi_core::exec::Execution;
use aoi_core::sim::StopRule;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "aoi", version, about = "AoI/PAoI moments and simulation for M/G/1/1 status-update queues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form moments over the configured grid.
    Analytic(Common),
    /// Simulated statistics over the configured grid.
    Simulate(Common),
    /// Sweep in the mode given by the file or `--mode`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Run the cross-check suite on the system configuration.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Flip the sign of a' in the closed form (the graph check must fail).
        #[arg(long)]
        corrupt_a_prime: bool,
        /// Skip simulation-based checks.
        #[arg(long)]
        analytic_only: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated arrival rates.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_axis)]
    axis: Option<Axis>,
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policies: Option<Vec<PolicyKind>>,
    #[arg(long, conflicts_with = "deliveries")]
    horizon: Option<f64>,
    #[arg(long)]
    deliveries: Option<u64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    /// CSV output path (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-delivery CSV output path.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Run grid points and replications on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "analytic" => Ok(Mode::Analytic),
        "simulate" => Ok(Mode::Simulate),
        "both" => Ok(Mode::Both),
        _ => Err(format!("unknown mode {s:?} (analytic, simulate, both)")),
    }
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    match s {
        "theta" => Ok(Axis::Theta),
        "lambda1" => Ok(Axis::Lambda1),
        "none" => Ok(Axis::None),
        _ => Err(format!("unknown axis {s:?} (theta, lambda1, none)")),
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s).ok_or_else(|| {
        format!("unknown policy {s:?} (probabilistic, non_preemptive, self_preemptive, globally_preemptive)")
    })
}

impl Common {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    /// File values overridden by flags, then re-validated.
    fn load(&self, mode: Option<Mode>) -> Result<ExperimentSpec, SpecError> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            SpecError::Parse(format!("cannot read {}: {e}", self.config.display()))
        })?;
        let mut spec = parse_spec(&text)?;
        let invalid = |e: aoi_core::AnalyticError| SpecError::Validation(e.to_string());
        if let Some(rates) = &self.rates {
            spec.system = spec.system.with_rates(rates.clone()).map_err(invalid)?;
        }
        if let Some(theta) = self.theta {
            if !(0.0..=1.0).contains(&theta) {
                return Err(SpecError::Validation(format!(
                    "--theta must lie in [0, 1], got {theta}"
                )));
            }
            spec.system = spec.system.with_theta(theta).map_err(invalid)?;
        }
        if let Some(axis) = self.axis {
            spec.sweep.axis = axis;
            if axis == Axis::None {
                spec.sweep.points = 1;
            }
        }
        if let Some(v) = self.start {
            spec.sweep.start = v;
        }
        if let Some(v) = self.stop {
            spec.sweep.stop = v;
        }
        if let Some(v) = self.points {
            spec.sweep.points = v;
        }
        if let Some(p) = &self.policies {
            spec.policies = p.clone();
        }
        if let Some(h) = self.horizon {
            spec.sim.stop = StopRule::Horizon(h);
        }
        if let Some(d) = self.deliveries {
            spec.sim.stop = StopRule::Deliveries(d);
        }
        if let Some(v) = self.warmup {
            spec.sim.warmup = v;
        }
        if let Some(v) = self.seed {
            spec.sim.seed = v;
        }
        if let Some(v) = self.replications {
            spec.sim.replications = v;
        }
        if let Some(v) = self.batches {
            spec.sim.batches = v;
        }
        if let Some(p) = &self.output {
            spec.output = Some(p.clone());
        }
        if let Some(p) = &self.samples {
            spec.samples_output = Some(p.clone());
        }
        if let Some(m) = mode {
            spec.mode = m;
        }
        if spec.policies.is_empty() {
            return Err(SpecError::Validation("at least one policy is required".into()));
        }
        validate_spec(&spec)?;
        Ok(spec)
    }
}

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn sweep(common: &Common, mode: Option<Mode>) -> ExitCode {
    let spec = match common.load(mode) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = match open_output(spec.output.as_deref()) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_CONFIG, format!("cannot open output: {e}")),
    };
    match run_sweep_logged(&spec, common.execution()) {
        Ok((table, runs)) => {
            if let Err(e) = write_csv(&table, out) {
                return fail(EXIT_CONFIG, e);
            }
            if let Some(path) = &spec.samples_output {
                let written = File::create(path)
                    .map_err(aoi_cli::SweepError::from)
                    .and_then(|f| write_samples_csv(table.axis, &runs, BufWriter::new(f)));
                if let Err(e) = written {
                    return fail(EXIT_CONFIG, e);
                }
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            if let Err(e) = write_csv(&failure.partial, out) {
                eprintln!("error: {e}");
            }
            fail(EXIT_NUMERICAL, failure.error)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Analytic(common) => sweep(&common, Some(Mode::Analytic)),
        Command::Simulate(common) => sweep(&common, Some(Mode::Simulate)),
        Command::Sweep { common, mode } => sweep(&common, mode),
        Command::Validate {
            common,
            corrupt_a_prime,
            analytic_only,
        } => {
            let spec = match common.load(Some(Mode::Both)) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let options = ValidateOptions {
                corrupt_a_prime,
                analytic_only,
            };
            let report = validate(&spec, options, common.execution());
            print!("{report}");
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
    }
}
