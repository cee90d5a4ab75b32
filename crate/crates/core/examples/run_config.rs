//! Runs an experiment config end to end and prints the manifest summary.
//!
//! cargo run --release --example run_config -- configs/schrodinger.toml /tmp/out

use std::path::PathBuf;

use osl_lab::experiment::{run_file, RunOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/minimal.toml".into()));
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| std::env::temp_dir().join("osl-lab-run").display().to_string()));
    let opts = RunOptions { out_dir: Some(out_dir.clone()), ..Default::default() };
    match run_file(&config, &opts) {
        Ok(m) => {
            println!("config sha256 {}", m.config_sha256);
            for s in &m.stages {
                println!("{:<11} {:>6.2}s  {}", s.stage, s.seconds, s.detail);
            }
            println!("wrote {} to {}", m.outputs.join(", "), out_dir.display());
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
