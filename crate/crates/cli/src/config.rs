//! `key=value` config files.
//!
//! Keys are long flag names of the chosen subcommand (or a global flag).
//! Values from the file are spliced into the argument list ahead of the user's
//! own arguments, so flags given on the command line still win and anything
//! absent from both falls back to the built-in default.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            bail!("config line {}: expected key=value, found `{t}`", i + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse_config_text(&text)
}

/// Find `--config <path>` (or `--config=<path>`) in raw arguments.
pub fn find_config_arg(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Insert config values right after the subcommand name. Unknown keys are a
/// usage error.
pub fn splice_config(cmd: &Command, args: Vec<OsString>, config: &BTreeMap<String, String>) -> Result<Vec<OsString>> {
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(pos) = args.iter().position(|a| names.iter().any(|n| a == n.as_str())) else {
        return Ok(args);
    };
    let sub = cmd
        .find_subcommand(args[pos].to_str().unwrap_or_default())
        .expect("subcommand listed above");
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in config {
        if key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            bail!("unknown config key `{key}` for `{}`", sub.get_name());
        };
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => bail!("config key `{key}` expects true/false, found `{other}`"),
            },
            _ => extra.push(format!("--{key}={value}").into()),
        }
    }
    let mut out = args;
    let at = pos + 1;
    out.splice(at..at, extra);
    Ok(out)
}
