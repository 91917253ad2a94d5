use std::process::ExitCode;

use clap::Parser;
use rgbd_calib_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => {
            if code == 4 {
                eprintln!("warning: solver stopped before converging; results were written");
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
