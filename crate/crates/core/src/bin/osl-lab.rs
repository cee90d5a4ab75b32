use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use osl_lab::experiment::{describe, parse_config, run_file, validate, OutputFormat, RunOptions};

#[derive(Parser)]
#[command(name = "osl-lab", version, about = "Numerical lab for linear cocycles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipelines selected in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "OSL_LAB_THREADS")]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Describe a catalog cocycle, base system or pipeline ("catalog" and "pipelines" list them).
    Describe { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out_dir, seed, threads, format } => {
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            match run_file(&config, &RunOptions { out_dir, seed, threads, format }) {
                Ok(m) => {
                    for w in &m.warnings {
                        eprintln!("warning: {w}");
                    }
                    for s in &m.stages {
                        println!("{:<11} {} ({:.2}s) {}", s.stage, s.status, s.seconds, s.detail);
                    }
                    0
                }
                Err(e) => {
                    eprintln!("{e}");
                    e.exit_code()
                }
            }
        }
        Command::Validate { config } => match std::fs::read_to_string(&config) {
            Err(e) => {
                eprintln!("I/O error: {}: {e}", config.display());
                4
            }
            Ok(text) => match parse_config(&text, Some(&config)).and_then(|c| validate(&c)) {
                Ok(v) => {
                    for w in &v.warnings {
                        eprintln!("warning: {w}");
                    }
                    println!("ok: {} over {}", v.cocycle.label(), v.base.label());
                    0
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    2
                }
            },
        },
        Command::Describe { name } => match describe(&name) {
            Some(text) => {
                print!("{text}");
                0
            }
            None => {
                eprintln!("unknown name `{name}`; try `osl-lab describe catalog`");
                2
            }
        },
    };
    ExitCode::from(code as u8)
}
