//! Command-line front end: simulate, import, trim and inspect trace sets,
//! run the correlation / difference-of-means attacks with their
//! false-positive control, and emit plot-ready time/frequency diagnostics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for usage and validation errors.
pub const EXIT_USAGE: u8 = 2;
/// Exit code for I/O and data-integrity errors.
pub const EXIT_DATA: u8 = 3;

/// Errors carried up to `main`, tagged with the exit code they map to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<cema::traceio::TraceIoError> for CliError {
    fn from(e: cema::traceio::TraceIoError) -> Self {
        use cema::traceio::TraceIoError::*;
        match e {
            InvalidWindow { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<cema::simulate::SimError> for CliError {
    fn from(e: cema::simulate::SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<cema::attack::AttackError> for CliError {
    fn from(e: cema::attack::AttackError) -> Self {
        use cema::attack::AttackError::*;
        match e {
            BitIndexOutOfRange(_) | Leakage(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<cema::spectral::SpectralError> for CliError {
    fn from(e: cema::spectral::SpectralError) -> Self {
        use cema::spectral::SpectralError::*;
        match e {
            TooShort(_) => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "cema", version, about = "EM side-channel analysis toolkit for PRESENT-80")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace set and write it to disk
    Simulate(SimulateArgs),
    /// Key-recovery attacks over a stored trace set
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Run the full attack on a non-encryption set to expose false positives
    NoiseControl(NoiseControlArgs),
    /// Time-domain diagnostics: trace time series and sample histogram
    Sema(SemaArgs),
    /// Frequency-domain diagnostics: spectrum, spectrogram, band energies
    Sfema(SfemaArgs),
    /// Convert oscilloscope CSV exports into a trace set
    Import(ImportArgs),
    /// Extract a sample window from every trace
    Trim(TrimArgs),
    /// Print a trace set's manifest summary
    Info(InfoArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScheduleArg {
    Serial,
    Parallel,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PlaintextArg {
    Sweep,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    Hw,
    Hd,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Args)]
struct SimulateArgs {
    /// 20-hex-digit key (spaces/colons allowed)
    #[arg(long)]
    key: String,
    /// Destination manifest path (payload goes next to it)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    traces: usize,
    #[arg(long, default_value_t = 8800)]
    samples: usize,
    /// Noise standard deviation per acquisition cycle, volts
    #[arg(long, default_value_t = 2e-3)]
    sigma: f64,
    /// Volts per Hamming unit
    #[arg(long, default_value_t = 1e-3)]
    gain: f64,
    /// Encryption cycles averaged per stored trace
    #[arg(long, default_value_t = 5)]
    averaging: u32,
    /// RNG seed; generated and printed when omitted
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Serial)]
    schedule: ScheduleArg,
    /// Comma-separated leak offsets (8 for serial, 1 for parallel);
    /// defaults to evenly spaced positions
    #[arg(long, value_delimiter = ',')]
    offsets: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = PlaintextArg::Sweep)]
    plaintexts: PlaintextArg,
    #[arg(long, default_value_t = 2.5e9)]
    sample_rate: f64,
    /// Generate a noise-only control set (gain forced to zero)
    #[arg(long)]
    noise_only: bool,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Correlation attack: Hamming-model hypotheses vs. every sample
    Cema(CemaArgs),
    /// Difference-of-means attack on one selector bit
    Dema(DemaArgs),
}

#[derive(Args)]
struct CemaArgs {
    /// Trace-set manifest
    #[arg(long = "in")]
    input: PathBuf,
    /// Target byte positions, 0 = most significant
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4, 5, 6, 7])]
    bytes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ModelArg::Hw)]
    model: ModelArg,
    /// Reference state for the Hamming-distance model
    #[arg(long, default_value_t = 0)]
    hd_reference: u8,
    /// Write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the text table here (it is always printed to stdout)
    #[arg(long)]
    table: Option<PathBuf>,
    /// Dump per-byte correlation surfaces and max-coefficient series as CSV
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Known key: print the rank of each true subkey byte
    #[arg(long)]
    true_key: Option<String>,
}

#[derive(Args)]
struct DemaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    byte: usize,
    #[arg(long, default_value_t = 0)]
    bit: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseControlArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct SemaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Trace index for the time series
    #[arg(long, default_value_t = 0)]
    trace: usize,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Second set (e.g. noise-only) to emit alongside for comparison
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct SfemaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    trace: usize,
    #[arg(long, default_value_t = 256)]
    window_len: usize,
    #[arg(long, default_value_t = 128)]
    hop_len: usize,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    window: WindowArg,
    /// Frequency bands as lo:hi pairs in Hz, e.g. 75e6:200e6,375e6:450e6
    #[arg(long, value_delimiter = ',')]
    bands: Option<Vec<String>>,
    /// Second set for band-energy comparison (mean energy ratio per band)
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// One CSV file per trace, in trace order
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// File with one 16-hex-digit plaintext per line
    #[arg(long)]
    plaintexts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    probe: Option<String>,
}

#[derive(Args)]
struct TrimArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// First sample kept
    #[arg(long)]
    start: usize,
    /// One past the last sample kept
    #[arg(long)]
    end: usize,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Attack(AttackCommand::Cema(args)) => commands::attack_cema(args),
        Command::Attack(AttackCommand::Dema(args)) => commands::attack_dema(args),
        Command::NoiseControl(args) => commands::noise_control(args),
        Command::Sema(args) => commands::sema(args),
        Command::Sfema(args) => commands::sfema(args),
        Command::Import(args) => commands::import(args),
        Command::Trim(args) => commands::trim(args),
        Command::Info(args) => commands::info(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
