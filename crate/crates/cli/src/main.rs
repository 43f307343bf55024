//! pose6d — synthetic 6D pose-estimation toolkit.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage error.

use clap::{Parser, Subcommand};
use pose6d_cli::commands;

#[derive(Parser)]
#[command(
    name = "pose6d",
    about = "Synthetic 6D object pose estimation: data generation, training, \
             PnP baselines, evaluation, and verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the BOP-layout directory.
    GenData(commands::gen_data::GenDataArgs),
    /// Train the keypoint-to-rotation module.
    TrainRotest(commands::train_rotest::TrainRotestArgs),
    /// Train the toy set predictor end to end.
    TrainToy(commands::train_toy::TrainToyArgs),
    /// Score a results CSV against dataset groundtruth.
    Eval(commands::eval::EvalArgs),
    /// Recover poses from keypoints with the PnP baseline.
    SolvePnp(commands::solve_pnp::SolvePnpArgs),
    /// Run the keypoint-representation × pose-recovery grid.
    Ablate(commands::ablate::AblateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Export attention maps of a trained set predictor.
    DumpAttention(commands::dump_attention::DumpAttentionArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::TrainRotest(args) => commands::train_rotest::run(args),
        Command::TrainToy(args) => commands::train_toy::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::SolvePnp(args) => commands::solve_pnp::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::DumpAttention(args) => commands::dump_attention::run(args),
    }
}
