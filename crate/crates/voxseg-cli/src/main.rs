//! Command-line front end: one subcommand per pipeline stage, shared
//! `--seed/--config/--deterministic/--threads` globals, config echo per run.

use clap::Parser;

use voxseg::error::Error;
use voxseg_cli::cmd;
use voxseg_cli::config::{GlobalOpts, Globals};

#[derive(Parser, Debug)]
#[command(
    name = "voxseg",
    version,
    about = "Interactive memory-based volumetric segmentation pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with analytic ground truth.
    Phantom(cmd::phantom::PhantomArgs),
    /// Convert between volume formats and standardize field of view.
    Convert(cmd::convert::ConvertArgs),
    /// Train a promptable segmentation model on a corpus.
    Train(cmd::train::TrainArgs),
    /// Segment one volume with simulated clicks and mask propagation.
    Infer(cmd::infer::InferArgs),
    /// Compare propagation strategies across a corpus split.
    Sweep(cmd::sweep::SweepArgs),
    /// Score predictions against references and render reports.
    Eval(cmd::eval::EvalArgs),
    /// Measure cartilage thickness over the bone-facing surface.
    Thickness(cmd::thickness::ThicknessArgs),
    /// Rank-sum significance tests between model arms.
    Stats(cmd::stats::StatsArgs),
    /// Time repeated inference and check replay determinism.
    Bench(cmd::bench::BenchArgs),
    /// Re-render a summary table as HTML and pivot CSV.
    Report(cmd::report::ReportArgs),
}

/// Usage and config problems exit 2, numerical failures 4, bad data 3.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArg(_)
        | Error::ConfigMismatch(_)
        | Error::SpecError(_)
        | Error::InvalidChunkSize => 2,
        Error::DivergenceError(_)
        | Error::GradCheckFailure(_, _)
        | Error::UnrepresentableValue(_, _) => 4,
        _ => 3,
    }
}

fn run(cli: &Cli) -> voxseg::error::Result<()> {
    let globals = Globals::resolve(&cli.global)?;
    match &cli.command {
        Command::Phantom(a) => cmd::phantom::run(a, &globals),
        Command::Convert(a) => cmd::convert::run(a, &globals),
        Command::Train(a) => cmd::train::run(a, &globals),
        Command::Infer(a) => cmd::infer::run(a, &globals),
        Command::Sweep(a) => cmd::sweep::run(a, &globals),
        Command::Eval(a) => cmd::eval::run(a, &globals),
        Command::Thickness(a) => cmd::thickness::run(a, &globals),
        Command::Stats(a) => cmd::stats::run(a, &globals),
        Command::Bench(a) => cmd::bench::run(a, &globals),
        Command::Report(a) => cmd::report::run(a, &globals),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
