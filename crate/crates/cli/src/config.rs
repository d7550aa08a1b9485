//! `--config FILE` support. Keys are long flag names (`-` or `_` separated); a key is applied
//! only when the flag is absent from the command line, so flags win over the file and the
//! file wins over built-in defaults.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use btd::io::parse_key_values;
use btd::BtdError;
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

/// Flags that exclude each other; a file value is dropped when its partner was given.
const EXCLUSIVE: [(&str, &str); 1] = [("lambda", "sigma_hat")];

/// Extends `args` with the entries of the config file named by `--config`, if any.
pub fn merge_config_file(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let matches = cmd.clone().try_get_matches_from(&args)?;
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(args);
    };
    let Some(path) = sub.try_get_one::<PathBuf>("config").ok().flatten() else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    let sub_cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
    let mut merged = args;
    for (key, offset, value) in parse_key_values(&text)? {
        let long = key.replace('_', "-");
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && a.get_id() != "config")
            .ok_or_else(|| BtdError::Usage(format!("{}: unknown key `{key}` at byte {offset}", path.display())))?;
        let id = arg.get_id().as_str();
        if from_command_line(sub, id) || partner_given(sub, id) {
            continue;
        }
        if arg.get_action().takes_values() {
            merged.push(format!("--{long}").into());
            merged.push(value.into());
        } else {
            match value.as_str() {
                "true" => merged.push(format!("--{long}").into()),
                "false" => {}
                other => {
                    return Err(BtdError::Usage(format!("{key}: expected true or false, got `{other}`")).into());
                }
            }
        }
    }
    Ok(merged)
}

fn from_command_line(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn partner_given(m: &ArgMatches, id: &str) -> bool {
    EXCLUSIVE.iter().any(|&(a, b)| (id == a && from_command_line(m, b)) || (id == b && from_command_line(m, a)))
}
