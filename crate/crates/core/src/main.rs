use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use substance_ner::cli::{exit_code, run_command, Verb, EXIT_OK, EXIT_USAGE};
use substance_ner::config::parse_config;

/// Substance-use trigger and argument tagging.
#[derive(Debug, Parser)]
#[command(name = "substance-ner", version)]
struct Args {
    #[arg(value_enum)]
    verb: Verb,

    /// `key = value` run configuration; every key has a default except paths.
    #[arg(short, long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let text = match &args.config {
        None => String::new(),
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(EXIT_USAGE);
            }
        },
    };
    let result = parse_config(&text).and_then(|cfg| run_command(args.verb, &cfg));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.report);
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
