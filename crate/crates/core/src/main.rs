use std::process::ExitCode;

use lpvss::cli;

fn main() -> ExitCode {
    let env_seed = std::env::var("LPV_SEED").ok();
    match cli::run(std::env::args_os(), env_seed) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                cli::CliError::Failed(text) => print!("{text}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
