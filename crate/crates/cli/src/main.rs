mod args;
mod commands;
mod config;
mod provenance;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Bad flags or flag combinations, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse(argv: Vec<OsString>) -> Result<(Cli, Vec<OsString>), clap::Error> {
    // required flags may come from the config, so expand before parsing
    let Some(cfg) = config::config_path(&argv) else {
        let cli = Cli::try_parse_from(&argv)?;
        return Ok((cli, argv));
    };
    let expanded = match config::expand(&argv, &cfg) {
        Ok(v) => v,
        Err(e) => return Err(Cli::command_error(format!("{e:#}"))),
    };
    let cli = Cli::try_parse_from(&expanded)?;
    Ok((cli, expanded))
}

impl Cli {
    fn command_error(msg: String) -> clap::Error {
        use clap::CommandFactory;
        Cli::command().error(clap::error::ErrorKind::InvalidValue, msg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let (cli, argv) = match parse(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };

    let result = match &cli.command {
        Command::Replay(r) => commands::replay(&cli, &r.run),
        _ => commands::run(&cli, &argv[1..]),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
