use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regionloc_cli::commands;
use regionloc_cli::layout::RunLayout;
use regionloc_cli::{ExperimentConfig, HarnessError};

#[derive(Parser, Debug)]
#[command(name = "regionloc", version, about = "Region-classification camera relocalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, shared by the stages of one experiment.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    hypotheses: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    max_refine_iters: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with train and query views.
    GenScene,
    /// Fuse the training views and build the partition tree.
    BuildTree,
    /// Meta-train an initialization on generated scenes.
    Pretrain,
    /// Train the region classifier on the training views.
    Train,
    /// Localize the query views.
    Localize,
    /// Compare an estimated trajectory with ground truth.
    Eval {
        /// Estimated trajectory; defaults to the localize output.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Reference trajectory; defaults to the generated query trajectory.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut config = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(h) = cli.hypotheses {
        config.ransac.hypotheses = h;
    }
    if let Some(t) = cli.tau {
        config.ransac.tau = t;
    }
    if let Some(k) = cli.max_refine_iters {
        config.ransac.max_refine_iters = k;
    }
    config.validate()?;
    let print = |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    match cli.command {
        Command::GenScene => print(serde_json::to_value(commands::gen_scene(&config)?).expect("json")),
        Command::BuildTree => print(serde_json::to_value(commands::build_tree(&config)?).expect("json")),
        Command::Pretrain => print(serde_json::to_value(commands::pretrain(&config)?).expect("json")),
        Command::Train => print(serde_json::to_value(commands::train(&config)?).expect("json")),
        Command::Localize => {
            let r = commands::localize(&config)?;
            print(serde_json::json!({
                "count": r.count,
                "failures": r.failures,
                "median_translation": r.median_translation,
                "median_rotation_deg": r.median_rotation_deg,
            }))
        }
        Command::Eval { estimates, truth } => {
            let layout = RunLayout::new(&config.out_dir);
            let est = estimates.unwrap_or_else(|| layout.estimates());
            let gt = truth.unwrap_or_else(|| layout.query_trajectory());
            let r = commands::eval(&config, &est, &gt)?;
            print(serde_json::json!({
                "count": r.count,
                "median_translation": r.median_translation,
                "median_rotation_deg": r.median_rotation_deg,
                "success": r.success,
            }))
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
