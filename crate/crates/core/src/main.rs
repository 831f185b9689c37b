use std::process::ExitCode;

use clap::Parser;
use seasonal_mpp::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, o.file);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
