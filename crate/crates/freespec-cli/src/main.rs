use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use freespec_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let outcome = match run(&cli.command, &cli.flags) {
        Ok(o) => o,
        Err(e) => {
            let kind = match e {
                CliError::Input(_) => "input error",
                CliError::Numeric(_) => "numeric failure",
            };
            eprintln!("freespec {}: {kind}: {e}", cli.command.name());
            return e.exit_code();
        }
    };
    print!("{}", outcome.text);
    if let Some(path) = &cli.flags.out {
        if let Err(e) = std::fs::write(path, outcome.certificate.to_json()) {
            eprintln!("freespec: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
    ExitCode::SUCCESS
}
