//! `tagweave` command-line frontend. One subcommand per pipeline stage plus
//! `demo`, which runs the whole synthetic benchmark in-process.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use tagweave::Error;

use commands::Command;

#[derive(Debug, Parser)]
#[command(name = "tagweave", version, about = "Genre tag embeddings from audio classifier confusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const USAGE_EXIT: u8 = 2;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("TAGWEAVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("TAGWEAVE_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("ERROR parameter: {msg}");
        return ExitCode::from(USAGE_EXIT);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {e}", e.code());
            match e {
                Error::Parameter(_) => ExitCode::from(USAGE_EXIT),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
