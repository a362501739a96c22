use anyhow::Result;
use clap::{Parser, Subcommand};

use trajlm_cli::commands::{
    cmd_ablate, cmd_eval, cmd_gen, cmd_plot, cmd_retarget, cmd_train, AblateArgs, EvalArgs,
    GenArgs, PlotArgs, RetargetArgs, TrainArgs,
};

/// Locomotion control as next-token prediction, at desk scale: generate
/// trajectory datasets, retarget keypoints, train causal transformer
/// policies, evaluate them closed-loop, and run ablation studies.
#[derive(Parser)]
#[command(name = "trajlm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert / action-free trajectory datasets or keypoint CSVs.
    Gen(GenArgs),
    /// Retarget keypoint CSVs onto the robot's gait joints via trajectory IK.
    Retarget(RetargetArgs),
    /// Train a policy on one or more datasets.
    Train(TrainArgs),
    /// Evaluate a checkpoint (tracking, prediction, portrait, unseen,
    /// correlation).
    Eval(EvalArgs),
    /// Run a named ablation or scaling experiment end to end.
    Ablate(AblateArgs),
    /// Render a CSV as an SVG plot.
    Plot(PlotArgs),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Retarget(args) => cmd_retarget(args),
        Command::Train(args) => cmd_train(args).map(|_| ()),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Plot(args) => cmd_plot(args),
    }
}
