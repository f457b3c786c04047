use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use i2t2i_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let response = run(Cli::parse());
    let text = serde_json::to_string_pretty(&response.body).expect("JSON values always serialize");
    // A closed stdout (e.g. piped into `head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    ExitCode::from(response.exit)
}
