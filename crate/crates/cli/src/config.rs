//! Key-value config files.
//!
//! ```text
//! # shared by every command that has the flag
//! seed = 7
//! precision = f64
//!
//! [train]
//! epochs = 20
//! order = s,e,p
//! include-query-level = true
//! ```
//!
//! Keys are long flag names without the leading dashes (`_` is accepted
//! for `-`). Top-level keys apply to every command that accepts them;
//! keys under `[command]` apply to that command only and must exist
//! there. Flags given on the command line win.

use clap::{ArgAction, Command};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub global: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

pub fn parse(text: &str) -> Result<ConfigFile, String> {
    let mut cfg = ConfigFile::default();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            cfg.sections.entry(name.trim().to_string()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        let value = v.trim().trim_matches('"').to_string();
        match &section {
            Some(s) => cfg.sections.get_mut(s).expect("section exists").insert(key, value),
            None => cfg.global.insert(key, value),
        };
    }
    Ok(cfg)
}

/// Command-line arguments equivalent to `cfg` for subcommand `sub`.
pub fn to_args(cfg: &ConfigFile, cmd: &Command, sub: &str) -> Result<Vec<String>, String> {
    let sc = cmd
        .find_subcommand(sub)
        .ok_or_else(|| format!("unknown command `{sub}`"))?;
    if let Some(name) = cfg.sections.keys().find(|s| cmd.find_subcommand(s).is_none()) {
        return Err(format!("config section [{name}] is not a command"));
    }
    let known = |c: &Command, key: &str| c.get_arguments().any(|a| a.get_long() == Some(key));

    let mut merged: BTreeMap<&str, &str> = BTreeMap::new();
    for (k, v) in &cfg.global {
        if known(sc, k) {
            merged.insert(k, v);
        } else if !cmd.get_subcommands().any(|c| known(c, k)) {
            return Err(format!("unknown config key `{k}`"));
        }
    }
    for (k, v) in cfg.sections.get(sub).into_iter().flatten() {
        if !known(sc, k) {
            return Err(format!("config key `{k}` is not accepted by `{sub}`"));
        }
        merged.insert(k, v);
    }

    let mut out = Vec::new();
    for (k, v) in merged {
        let arg = sc.get_arguments().find(|a| a.get_long() == Some(k)).expect("checked");
        match arg.get_action() {
            ArgAction::SetTrue => match v {
                "true" | "on" | "yes" | "1" => out.push(format!("--{k}")),
                "false" | "off" | "no" | "0" => {}
                other => return Err(format!("config key `{k}`: expected true/false, got `{other}`")),
            },
            _ => {
                out.push(format!("--{k}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}
