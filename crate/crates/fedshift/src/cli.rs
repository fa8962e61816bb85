//! Command line: `train`, `sweep` and `theory` subcommands, `--config PATH`,
//! and one `--key value` flag per config key.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::config::{ConfigBuilder, ConfigError, ExperimentConfig, Origin, KEYS};

pub fn command() -> Command {
    let mut cmd = Command::new("fedshift")
        .about("Federated label-shift simulator: training runs, sweeps and theory checks")
        .subcommand(Command::new("train").about("Run one configuration"))
        .subcommand(Command::new("sweep").about("Run the grid spanned by the sweep_* axes"))
        .subcommand(Command::new("theory").about("Run the numerical theory checks"))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .global(true)
                .help("Config file (flat key = value with [sections])"),
        );
    for k in KEYS {
        if k.name == "mode" {
            continue;
        }
        let mut arg = Arg::new(k.name)
            .long(k.name.replace('_', "-"))
            .help(k.help)
            .global(true)
            .action(ArgAction::Set);
        if k.boolean {
            arg = arg
                .value_name("BOOL")
                .num_args(0..=1)
                .default_missing_value("true");
        } else {
            arg = arg.value_name("VALUE");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Resolves defaults, then the config file, then flags, then the subcommand.
pub fn resolve(matches: &ArgMatches) -> Result<ExperimentConfig, ConfigError> {
    let (mode, sub) = match matches.subcommand() {
        Some((name, sub)) => (Some(name), sub),
        None => (None, matches),
    };
    let mut builder = ConfigBuilder::new();
    if let Some(path) = sub.get_one::<PathBuf>("config") {
        builder.read_file(path)?;
    }
    for k in KEYS {
        if k.name == "mode" {
            continue;
        }
        if let Some(v) = sub.get_one::<String>(k.name) {
            builder.set(k.name, v, Origin::Flag)?;
        }
    }
    if let Some(mode) = mode {
        builder.set("mode", mode, Origin::Flag)?;
    }
    builder.build()
}

pub fn parse_from<I, T>(args: I) -> Result<ExperimentConfig, anyhow::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Ok(resolve(&matches)?)
}
