use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drain_cli::commands;
use drain_cli::{CliError, CliResult, LoadedConfig};

#[derive(Parser)]
#[command(name = "drain", version, about = "Train and evaluate recurrent parameter generators on drifting domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every domain of the configured dataset as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Data seed (defaults to the first seed in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to <output_dir>/data).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Train every configured method for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every seed and method, then write a mean ± std summary.
    Suite {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a decision boundary (PPM) from a trained checkpoint.
    Boundary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain index to draw; its points are overlaid.
        #[arg(long)]
        domain: usize,
        #[arg(long)]
        out: PathBuf,
        /// Data seed (defaults to the first seed in the config).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let load = |p: &PathBuf| LoadedConfig::load(p);
    match cli.command {
        Command::GenData { config, seed, out, force } => {
            let loaded = load(&config)?;
            let seed = seed.unwrap_or(loaded.config.seeds[0]);
            let out = out.unwrap_or_else(|| loaded.config.output_base().join("data"));
            let files = commands::gen_data(&loaded, seed, &out, force)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Train { config, seed } => {
            let loaded = load(&config)?;
            let seed = seed.unwrap_or(loaded.config.seeds[0]);
            let result = commands::train(&loaded, seed)?;
            for m in &result.methods {
                println!("{:<14} {} {:.4}", m.method.name(), result.metric, m.test);
            }
            println!("artifacts in {}", loaded.config.seed_dir(seed).display());
        }
        Command::Suite { config } => {
            let loaded = load(&config)?;
            let summary = commands::suite(&loaded)?;
            print!("{}", drain_cli::suite::render_table(&summary));
        }
        Command::Boundary {
            config,
            checkpoint,
            domain,
            out,
            seed,
            resolution,
        } => {
            let loaded = load(&config)?;
            let seed = seed.unwrap_or(loaded.config.seeds[0]);
            commands::boundary(&loaded, &checkpoint, seed, domain, resolution, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
