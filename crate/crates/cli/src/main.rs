use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnndm_cli::{run_all, run_stage, CliResult, ExperimentConfig, RunContext, RunManifest, Stage, StageOutcome};

#[derive(Parser)]
#[command(
    name = "gnndm",
    version,
    about = "Domain generalization laboratory: data, training, search, evaluation and bound checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory. Overrides the config and GNNDM_OUT.
    #[arg(long, env = "GNNDM_OUT")]
    out: Option<PathBuf>,
    /// Master seed. Overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run even if the manifest says the stage is up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the multi-domain dataset.
    Gen(Common),
    /// Train the discrepancy-minimizing embedding network.
    TrainDdmn(Common),
    /// Train the VAE over source embeddings.
    TrainVae(Common),
    /// Train the embedding classifier and the raw-feature baseline.
    TrainClf(Common),
    /// Latent nearest-neighbor search for every target embedding.
    Nns(Common),
    /// Target accuracy and risk in every mode.
    Eval(Common),
    /// Divergence, Bayes-risk and bound checks.
    VerifyBounds(Common),
    /// Every stage in order, then a summary table.
    RunAll {
        #[command(flatten)]
        common: Common,
        /// Repeat with each domain held out in turn.
        #[arg(long)]
        leave_one_out: bool,
    },
}

fn context(c: &Common) -> CliResult<RunContext> {
    let mut config = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        config.master_seed = s;
    }
    if let Some(o) = &c.out {
        config.out_dir = o.clone();
    }
    Ok(RunContext::new(config, c.force))
}

fn single(stage: Stage, c: &Common) -> CliResult<()> {
    let ctx = context(c)?;
    let manifest = RunManifest::load_or_default(&ctx.out)?;
    let (_, outcome) = run_stage(stage, &ctx, manifest)?;
    match outcome {
        StageOutcome::Ran => println!("{}: done ({})", stage.name(), ctx.out.display()),
        StageOutcome::Skipped => println!("{}: up to date ({})", stage.name(), ctx.out.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, result) = match &cli.command {
        Command::Gen(c) => ("gen", single(Stage::Gen, c)),
        Command::TrainDdmn(c) => ("train-ddmn", single(Stage::TrainDdmn, c)),
        Command::TrainVae(c) => ("train-vae", single(Stage::TrainVae, c)),
        Command::TrainClf(c) => ("train-clf", single(Stage::TrainClf, c)),
        Command::Nns(c) => ("nns", single(Stage::Nns, c)),
        Command::Eval(c) => ("eval", single(Stage::Eval, c)),
        Command::VerifyBounds(c) => ("verify-bounds", single(Stage::VerifyBounds, c)),
        Command::RunAll { common, leave_one_out } => (
            "run-all",
            context(common).and_then(|ctx| {
                let rows = run_all(&ctx, *leave_one_out)?;
                println!("{:<10} {:<7} {:>9} {:>9}", "mode", "target", "accuracy", "risk");
                for r in rows {
                    println!("{:<10} {:<7} {:>9.4} {:>9.4}", r.mode, r.target, r.accuracy, r.risk);
                }
                Ok(())
            }),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line(name));
            ExitCode::FAILURE
        }
    }
}
