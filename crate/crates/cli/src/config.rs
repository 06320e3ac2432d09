//! Flat `key = value` run configs.
//!
//! Keys are the long flag names of the chosen subcommand (`-` or `_`). A
//! config file is spliced into the argument list ahead of the command-line
//! flags, so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, ArgMatches, Command};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("{path}:{line}: unknown key `{key}` for `{command}`")]
    UnknownKey {
        path: PathBuf,
        line: usize,
        key: String,
        command: String,
    },
    #[error("{path}:{line}: `{key}` is a switch and takes true or false, got `{value}`")]
    NotBool {
        path: PathBuf,
        line: usize,
        key: String,
        value: String,
    },
    #[error("--config needs a path")]
    MissingPath,
}

/// Locates `--config <path>` (or `--config=<path>`) after the subcommand.
fn config_path(args: &[OsString]) -> Result<Option<(usize, usize, PathBuf)>, ConfigError> {
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            let path = args.get(i + 1).ok_or(ConfigError::MissingPath)?;
            return Ok(Some((i, 2, PathBuf::from(path))));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some((i, 1, PathBuf::from(p))));
        }
    }
    Ok(None)
}

/// Reads a config file into `(line, key, value)` entries.
fn read_entries(path: &Path) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        out.push((i + 1, key, value));
    }
    Ok(out)
}

/// Rewrites `argv` so the entries of any `--config` file become flags.
pub fn expand(root: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut root = root.clone();
    root.build();
    let Some(sub_pos) = argv
        .iter()
        .skip(1)
        .position(|a| a.to_str().is_some_and(|s| root.find_subcommand(s).is_some()))
        .map(|p| p + 1)
    else {
        return Ok(argv);
    };
    let name = argv[sub_pos].to_string_lossy().to_string();
    let sub = root.find_subcommand(&name).expect("matched above");
    let tail = &argv[sub_pos + 1..];
    let Some((at, len, path)) = config_path(tail)? else {
        return Ok(argv);
    };
    let on_command_line: Vec<String> = tail
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--"))
        .map(|s| s.split('=').next().unwrap_or(s).to_string())
        .collect();
    let mut injected: Vec<OsString> = Vec::new();
    for (line, key, value) in read_entries(&path)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| ConfigError::UnknownKey {
                path: path.clone(),
                line,
                key: key.clone(),
                command: name.clone(),
            })?;
        // list flags append, so the command line must replace rather than extend
        if on_command_line.contains(&key) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(ConfigError::NotBool {
                        path: path.clone(),
                        line,
                        key,
                        value,
                    })
                }
            }
        } else {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        }
    }
    let mut out: Vec<OsString> = argv[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend(tail[..at].iter().cloned());
    out.extend(tail[at + len..].iter().cloned());
    Ok(out)
}

/// Every argument of the subcommand with its final value, as a config file
/// that reproduces the run.
pub fn resolved(root: &Command, name: &str, matches: &ArgMatches) -> String {
    let mut root = root.clone();
    root.build();
    let sub = root.find_subcommand(name).expect("dispatched subcommand exists");
    let mut out = format!("# cqd {name}\n");
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if long == "config" || long == "help" {
            continue;
        }
        let Ok(Some(values)) = matches.try_get_raw(arg.get_id().as_str()) else { continue };
        let values: Vec<String> = values.map(|v| v.to_string_lossy().to_string()).collect();
        if values.is_empty() {
            continue;
        }
        out.push_str(&format!("{long} = {}\n", values.join(",")));
    }
    out
}
