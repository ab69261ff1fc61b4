use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use turndelay_cli::error::CliError;
use turndelay_cli::summary::RunSummary;
use turndelay_cli::{execute, out_dir_from_args, Cli};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            if let Some(dir) = out_dir_from_args(&args) {
                let err = CliError::Usage(e.kind().to_string());
                let _ = RunSummary::failed("usage", &err).write(&dir);
            }
            return ExitCode::from(2);
        }
    };
    let outcome = execute(&cli);
    match outcome.error {
        None => {
            println!(
                "{}",
                outcome.out_dir.join(turndelay_cli::summary::SUMMARY_FILE).display()
            );
            ExitCode::SUCCESS
        }
        Some(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_status() as u8)
        }
    }
}
