//! `key = value` config files merged under command-line flags, and the
//! resolved-configuration echo written next to every output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), no + 1);
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns config entries into extra arguments for `sub`, skipping keys the
/// user already gave on the command line. Keys that are not options of
/// this subcommand are ignored so one file can serve several commands.
pub fn config_args(cmd: &Command, matches: &ArgMatches, entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (key, value) in entries {
        let Some(arg) = cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            log::debug!("config key '{key}' does not apply to '{}'", cmd.get_name());
            continue;
        };
        let id = arg.get_id().as_str();
        if id == "config" || matches.value_source(id) == Some(ValueSource::CommandLine) {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{key}").into());
            out.push(value.into());
        } else if matches!(value.as_str(), "true" | "1" | "yes") {
            out.push(format!("--{key}").into());
        }
    }
    out
}

/// Every argument of the subcommand with its resolved value, in definition
/// order, as a config file that reproduces the run.
pub fn echo(cmd: &Command, matches: &ArgMatches) -> String {
    let mut s = String::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if matches!(id, "config" | "help" | "verbose") {
            continue;
        }
        if !arg.get_action().takes_values() {
            if matches.try_get_one::<bool>(id).ok().flatten() == Some(&true) {
                writeln!(s, "{long}=true").unwrap();
            }
            continue;
        }
        let Ok(Some(raw)) = matches.try_get_raw(id) else {
            continue;
        };
        let delim = arg.get_value_delimiter().unwrap_or(',').to_string();
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        writeln!(s, "{long}={}", values.join(&delim)).unwrap();
    }
    s
}
