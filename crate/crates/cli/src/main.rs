//! `depscreen` command-line tool.

mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Exit 2 for usage and validation errors, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> String {
        let (Failure::Usage(m) | Failure::Runtime(m)) = self;
        m.replace('\n', " ")
    }
}

impl From<depscreen_core::Error> for Failure {
    fn from(e: depscreen_core::Error) -> Self {
        use depscreen_core::Error;
        match e {
            Error::InvalidArgument(_) | Error::MissingClass { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("depscreen: error: {}", e.replace('\n', " "));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli.command, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("depscreen: error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
