use std::process::ExitCode;

use clap::Parser;
use ecgcl::commands::{run, Cli};
use ecgcl::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Capacity { occupancy, .. } = &e {
                eprintln!("{occupancy}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
