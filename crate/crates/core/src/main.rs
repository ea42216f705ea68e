use std::process::ExitCode;

use clap::Parser;
use wealthlab::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = cli::init_threads().and_then(|()| cli::run(&args));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.failures == 0 {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": { "kind": "point_failures", "failures": outcome.failures } })
                );
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{}", cli::error_json(&e));
            ExitCode::FAILURE
        }
    }
}
