mod commands;
mod common;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::exit_code;

#[derive(Parser, Debug)]
#[command(name = "climsurr", version, about = "Climate engine, surrogate and mitigation-game pipeline")]
struct Cli {
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a perturbed emission ensemble around a baseline.
    GenScenarios(commands::GenScenariosArgs),
    /// Run the simulator over an ensemble, one temperature CSV per scenario.
    Simulate(commands::SimulateArgs),
    /// Build the windowed surrogate dataset with a scenario-level split.
    MakeDataset(commands::MakeDatasetArgs),
    /// Train a recurrent surrogate checkpoint.
    TrainSurrogate(commands::TrainSurrogateArgs),
    /// Score a checkpoint on one dataset split.
    EvalSurrogate(commands::EvalSurrogateArgs),
    /// Play one episode from an action schedule or trained policies.
    RunEpisode(commands::RunEpisodeArgs),
    /// Train independent PPO agents in the mitigation game.
    TrainMarl(commands::TrainMarlArgs),
    /// Replay stored trajectories through the simulator and rank returns.
    EvalConsistency(commands::EvalConsistencyArgs),
    /// Time engine steps or environment steps.
    Bench(commands::BenchArgs),
    /// Write the data behind the standard figures as CSV.
    PlotData(plot::PlotDataArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ctx = common::Ctx::new(cli.force, cli.jobs);
    let result = match cli.command {
        Command::GenScenarios(a) => commands::gen_scenarios(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::MakeDataset(a) => commands::make_dataset(&ctx, a),
        Command::TrainSurrogate(a) => commands::train_surrogate(&ctx, a),
        Command::EvalSurrogate(a) => commands::eval_surrogate(&ctx, a),
        Command::RunEpisode(a) => commands::run_episode(&ctx, a),
        Command::TrainMarl(a) => commands::train_marl(&ctx, a),
        Command::EvalConsistency(a) => commands::eval_consistency(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
        Command::PlotData(a) => plot::plot_data(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
