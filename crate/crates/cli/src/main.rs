//! `timelike`: extract, check, reconstruct and roundtrip timelike surfaces
//! in Minkowski 4-space.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use timelike_surfaces::Error;

/// Exit codes: 0 success, 1 other failures (including --strict
/// rejections by `check`), 2 parametrization not isotropic, 3 minimal
/// point, 4 I/O or format error, 5 incompatible invariant data.
#[derive(Parser, Debug)]
#[command(name = "timelike", version, about = "Invariants and reconstruction of timelike surfaces in R^4_1")]
struct Cli {
    /// Log level for diagnostics on standard error.
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the invariant set of a sampled surface (JSON or .csv).
    Extract(ExtractArgs),
    /// Evaluate the compatibility conditions of an invariant set.
    Check(CheckArgs),
    /// Integrate an invariant set back to a surface.
    Reconstruct(ReconstructArgs),
    /// Extract/reconstruct cycle with congruence and residual summary.
    Roundtrip(RoundtripArgs),
    /// Built-in example surfaces and invariant families.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Uv,
    Vu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    Positive,
    Negative,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Finite-difference order (2 or 4); defaults to the file's own order.
    #[arg(long, value_parser = ["2", "4"])]
    order: Option<String>,
    /// Absolute zero tolerance for classification (default: 1e-7 times
    /// the invariant scale).
    #[arg(long)]
    zero_tol: Option<f64>,
    /// Also run on every other sample and report convergence orders.
    #[arg(long)]
    refine: bool,
    /// Machine-readable output format.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the main output here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Relative isotropy tolerance.
    #[arg(long, default_value_t = timelike_surfaces::analysis::DEFAULT_ISOTROPY_TOL)]
    pub tol: f64,
    /// Sign of det(x, y, n1, n2).
    #[arg(long, value_enum, default_value = "positive")]
    pub orientation: OrientationArg,
    /// Write the residual report (JSON) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Condition set: auto, 1, 2 or 3.
    #[arg(long, default_value = "auto")]
    pub theorem: String,
    /// Residuals below this, relative to the invariant scale, count as zero
    /// under --strict.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Exit 1 when a non-negligible residual does not shrink under
    /// refinement.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub integ: IntegrationArgs,
    /// Also integrate along the other sweep and report the corner gap.
    #[arg(long)]
    pub compare_paths: bool,
}

#[derive(Args, Debug, Clone)]
pub struct IntegrationArgs {
    /// Surface type to reconstruct as: auto, 1, 2 or 3.
    #[arg(long, default_value = "auto")]
    pub theorem: String,
    /// Initial point `x1,x2,x3,x4`.
    #[arg(long, default_value = "0,0,0,0")]
    pub origin: String,
    /// Initial frame: `standard`, `random[:SEED]` or a JSON file with
    /// `x`, `y`, `n1`, `n2`.
    #[arg(long, default_value = "standard")]
    pub frame: String,
    /// Sweep order: along u then v, or along v then u.
    #[arg(long, value_enum, default_value = "uv")]
    pub path: PathArg,
    /// Re-project the frame every k steps; 0 disables.
    #[arg(long, default_value_t = 1)]
    pub reproject_every: usize,
    /// RK4 steps per grid interval.
    #[arg(long, default_value_t = 1)]
    pub substeps: usize,
    /// Flatness, relative to the field scale, that refuses the data.
    #[arg(long, default_value_t = 1e-2)]
    pub flatness_fail: f64,
    /// Refuse data whose flatness residual does not shrink under
    /// refinement (exit 5).
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct RoundtripArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub integ: IntegrationArgs,
    /// Relative isotropy tolerance for the extraction steps.
    #[arg(long, default_value_t = timelike_surfaces::analysis::DEFAULT_ISOTROPY_TOL)]
    pub tol: f64,
    /// Seed of the second, random initial frame used for invariant input.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum CatalogCommand {
    /// List the entries and their parameters.
    List {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Generate one entry on a grid.
    Emit(EmitArgs),
}

#[derive(Args, Debug)]
pub struct EmitArgs {
    pub name: String,
    /// Parameters as `key=value,key=value`.
    #[arg(long, default_value = "")]
    pub params: String,
    #[arg(long)]
    pub u0: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    /// Grid step (both axes).
    #[arg(long)]
    pub h: Option<f64>,
    /// Samples per axis.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = ["2", "4"], default_value = "2")]
    pub order: String,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NotIsotropic { .. } => 2,
        Error::MinimalPoint { .. } => 3,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) => 4,
        Error::IncompatibleData(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Check(a) => commands::check(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Roundtrip(a) => commands::roundtrip(&a),
        Command::Catalog { command } => match command {
            CatalogCommand::List { format } => commands::catalog_list(format),
            CatalogCommand::Emit(a) => commands::catalog_emit(&a),
        },
    };
    match result {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Rejected(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
