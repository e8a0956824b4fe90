use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cosmos_cli::ablate::run_ablation;
use cosmos_cli::commands;
use cosmos_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "cosmos",
    about = "Supervised COSMOS autoencoder: train, evaluate, ablate",
    version
)]
struct Cli {
    /// Worker threads for parallel streams and ablation cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured pipeline and write an archive, logs, and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an archived model on its configured test data.
    Eval {
        #[arg(long)]
        archive: PathBuf,
        /// Evaluate against a different config's data instead of the snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Rank-k identification metrics.
        #[arg(long)]
        rank_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation cell and emit the accuracy table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract per-stream code vectors for the configured test set.
    ExtractFeatures {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fused-posterior score histograms split by true class.
    ScoreDist {
        #[arg(long)]
        archive: PathBuf,
        /// Class whose posterior score is histogrammed.
        #[arg(long = "class")]
        class_of_interest: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
        config.hyper.seed = seed;
    }
    if let Some(out) = out {
        config.out_dir = out.display().to_string();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        // ignore the error when a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = load_config(&config, seed, out.as_ref())?;
            let out_dir = PathBuf::from(&config.out_dir);
            let outputs = commands::cmd_train(&config, &out_dir)?;
            println!("archive: {}", outputs.archive_path.display());
            println!("val accuracy: {:.4}", outputs.val_accuracy);
            println!("test accuracy: {:.4}", outputs.test_report.accuracy);
            Ok(())
        }
        Command::Eval {
            archive,
            config,
            rank_k,
            out,
        } => {
            let config_override = match config {
                Some(path) => Some(RunConfig::load(&path)?),
                None => None,
            };
            let report =
                commands::cmd_eval(&archive, config_override.as_ref(), rank_k, out.as_deref())?;
            print!("{}", report.human_table());
            Ok(())
        }
        Command::Ablate { config, seed, out } => {
            let config = load_config(&config, seed, out.as_ref())?;
            let out_dir = PathBuf::from(&config.out_dir);
            let table = run_ablation(&config)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("ablation.txt"), table.human_table())?;
            std::fs::write(out_dir.join("ablation.csv"), table.to_csv())?;
            print!("{}", table.human_table());
            if table.all_failed() {
                return Err(CliError::Divergence("every ablation cell failed".into()));
            }
            Ok(())
        }
        Command::ExtractFeatures { archive, out } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("out"));
            let path = commands::cmd_extract_features(&archive, &out_dir)?;
            println!("features: {}", path.display());
            Ok(())
        }
        Command::ScoreDist {
            archive,
            class_of_interest,
            bins,
            out,
        } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("out"));
            let path = commands::cmd_score_dist(&archive, class_of_interest, bins, &out_dir)?;
            println!("score distribution: {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
