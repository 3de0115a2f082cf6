mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use rrsitr::Error;

use args::{Cli, Command};

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Domain(_) | Error::Format { .. } | Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Numeric(_) => 4,
        Error::Internal(_) => 1,
    }
}

fn run(cli: Cli) -> rrsitr::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Inject(a) => commands::inject(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Trace(a) => commands::trace(a),
        Command::Sims(a) => commands::sims(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
