use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use fedshap_cli::{parse_config, run_experiment, run_sweep, Algorithm, Overrides, RunManifest};

/// Federated learning with Shapley-value-based relevant-client selection.
#[derive(Parser)]
#[command(name = "fedshap", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics files.
    Run(RunArgs),
    /// Run the same experiment across several seeds and summarize.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file (a saved manifest.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm to run; overrides the config file.
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    /// Number of communication rounds (T); overrides the config file.
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "fedshap-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated master seeds, one run each.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => {
            let overrides = Overrides {
                algorithm: args.common.algorithm,
                seed: args.seed,
                rounds: args.common.rounds,
            };
            parse_config(args.common.config.as_deref(), &overrides).and_then(|resolved| {
                let manifest = RunManifest::new(
                    resolved.seed,
                    resolved.algorithm,
                    resolved.hyper,
                    resolved.scenario,
                );
                run_experiment(&manifest, &args.common.out).map(|_| ())
            })
        }
        Command::Sweep(args) => {
            let overrides = Overrides {
                algorithm: args.common.algorithm,
                seed: None,
                rounds: args.common.rounds,
            };
            parse_config(args.common.config.as_deref(), &overrides)
                .and_then(|resolved| run_sweep(&resolved, &args.seeds, &args.common.out))
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
