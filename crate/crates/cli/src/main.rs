mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::CommandFactory;

use crate::settings::Settings;

/// How a run ended badly: usage problems exit 1, everything else exits 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<neb_core::Error> for Failure {
    fn from(e: neb_core::Error) -> Self {
        if e.is_argument() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("NEB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("NEB_THREADS must be a count, got {v:?}")))?;
    // 0 means serial
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run() -> Result<(), Failure> {
    let matches = match args::Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let known: Vec<String> = args::Cli::command()
        .find_subcommand(name)
        .expect("parsed subcommand exists")
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .collect();
    let settings = Settings::resolve(sub, &known)?;
    configure_threads()?;
    commands::dispatch(name, &settings)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `neb --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
