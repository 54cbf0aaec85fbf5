use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ktpfl_cli::{compare_runs, load_summary, parse_config, run_experiment, CliError};

#[derive(Parser)]
#[command(name = "ktpfl", version, about = "Personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate two or more `summary.json` files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            output_dir,
            seed,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let (summary, dir) = run_experiment(&cfg, base)?;
            println!(
                "{} seed {}: final avg accuracy {:.2}% (best {:.2}% at round {}), {} bytes exchanged",
                summary.algorithm,
                summary.seed,
                100.0 * summary.final_avg_accuracy,
                100.0 * summary.best_avg_accuracy,
                summary.best_round,
                summary.bytes.total
            );
            println!("artifacts in {}", dir.display());
        }
        Command::Compare { summaries } => {
            let runs = summaries
                .iter()
                .map(|p| Ok((p.display().to_string(), load_summary(p)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let cmp = compare_runs(&runs)?;
            for w in &cmp.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", cmp.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ktpfl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
