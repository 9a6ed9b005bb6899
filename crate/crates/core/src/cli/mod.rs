//! Command-line experiment driver: corpus generation, flow runs,
//! inequality sweeps, convergence studies and summary reports.

mod commands;
pub mod config;
pub mod corpus;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::{
    convergence_rows, verify_shape, Check, ConvergencePlan, ConvergenceRow, ErrorRecord, InequalityFamily, SummaryRow,
    VerifyPlan,
};
pub use config::{ExperimentConfig, FlowSettings, Tolerances};

use crate::error::Error;
use crate::hypersurface::Representation;

#[derive(Parser, Debug)]
#[command(name = "spaceflow", version, about = "Curvature flows and weighted curvature inequalities in space forms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded corpus of perturbed spheres
    Corpus(CommonArgs),
    /// Run the flow on a shape or corpus and audit the monitored series
    Simulate(SimulateArgs),
    /// Evaluate inequality gaps over a corpus
    Verify(VerifyArgs),
    /// Grid-refinement study of identity and rate residuals
    Convergence(ConvergenceArgs),
    /// Summarize the artifacts in an output directory
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML experiment configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sectional curvature: -1, 0 or 1
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<i32>,
    /// ambient dimension
    #[arg(long)]
    pub n: Option<usize>,
    /// polar intervals (comma-separated list for `convergence`)
    #[arg(long = "N", value_delimiter = ',')]
    pub resolution: Vec<usize>,
    /// longitudes of sphere grids
    #[arg(long)]
    pub n_phi: Option<usize>,
    #[arg(long, value_enum)]
    pub representation: Option<RepresentationArg>,
    /// flow / inequality order
    #[arg(long)]
    pub k: Option<usize>,
    /// quermassintegral index (default: all of 0..=k)
    #[arg(long)]
    pub l: Option<usize>,
    /// registry id (`pow:2`, `lin-pow:2`, `exp-pow:1`, `one`) or weight file; repeatable
    #[arg(long)]
    pub weight: Vec<String>,
    /// `default`, `key=value,...` overrides, or a directory holding a generated corpus
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// tolerance overrides `key=value,...`
    #[arg(long)]
    pub tol: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RepresentationArg {
    Profile,
    Sphere,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Profile => Representation::Profile,
            RepresentationArg::Sphere => Representation::Sphere,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `corpus`, `sphere:R`, or a shape file
    #[arg(long, default_value = "corpus")]
    pub shape: String,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// inequality family, or `all` for every family stated in the space form
    #[arg(long, value_enum, default_value = "all")]
    pub thm: InequalityFamily,
}

#[derive(Args, Debug, Clone)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub check: Check,
    /// number of corpus shapes to refine
    #[arg(long, default_value_t = 5)]
    pub shapes: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// directory with artifacts from the other subcommands
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

/// Machine-readable record printed on failure.
#[derive(Serialize)]
struct FailureRecord<'a> {
    error: &'a str,
    message: String,
}

/// Run the CLI on explicit arguments; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            report_failure(&e);
            2
        }
    }
}

fn report_failure(e: &Error) {
    let record = FailureRecord { error: e.kind(), message: e.to_string() };
    eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| e.to_string()));
}

/// Entry point of the binary.
pub fn main() -> ! {
    std::process::exit(run_from(std::env::args_os()))
}
