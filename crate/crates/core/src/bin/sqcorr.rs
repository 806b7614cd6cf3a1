use std::process::ExitCode;

use clap::Parser;
use sqcorr::cli::{run, Cli, Context};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli, &Context::from_env()) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sqcorr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
