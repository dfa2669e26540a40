use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use natscope::cli::{run, Cli};

fn fail(code: &str, message: &str, status: u8) -> ExitCode {
    let message = serde_json::to_string(message).unwrap_or_default();
    eprintln!("error: code={code} message={message}");
    ExitCode::from(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string(), e.exit_code() as u8),
    }
}
