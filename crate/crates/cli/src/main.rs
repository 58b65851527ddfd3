use clap::{Parser, Subcommand};

use cpdm_cli::commands::{eval, gen_data, make_maps, sample, schedule_dump, train, train_seg};
use cpdm_cli::config;
use cpdm_core::Error;

#[derive(Parser)]
#[command(
    name = "cpdm",
    version,
    about = "Conditional bridge-diffusion experiments on synthetic paired images"
)]
struct Cli {
    #[command(flatten)]
    overrides: config::ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset with a study-level split
    GenData(gen_data::GenDataArgs),
    /// Compute attention and attenuation guidance planes for every pair
    MakeMaps(make_maps::MakeMapsArgs),
    /// Train the attention segmenter on source images and truth masks
    TrainSeg(train_seg::TrainSegArgs),
    /// Train the bridge noise predictor
    Train(train::TrainArgs),
    /// Translate source images with a trained checkpoint
    Sample(sample::SampleArgs),
    /// Score translated images against their targets
    Eval(eval::EvalArgs),
    /// Print the schedule and reverse coefficients as CSV
    ScheduleDump(schedule_dump::ScheduleDumpArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Training(_) => 4,
            _ => 3,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> cpdm_core::Result<()> {
    let cfg = config::resolve(&cli.overrides)?;
    match &cli.command {
        Command::GenData(args) => gen_data::run(&cfg, args),
        Command::MakeMaps(args) => make_maps::run(&cfg, args),
        Command::TrainSeg(args) => train_seg::run(&cfg, args),
        Command::Train(args) => train::run(&cfg, args),
        Command::Sample(args) => sample::run(&cfg, args),
        Command::Eval(args) => eval::run(&cfg, args),
        Command::ScheduleDump(args) => schedule_dump::run(&cfg, args),
    }
}
