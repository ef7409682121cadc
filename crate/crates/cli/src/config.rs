//! Flat `key = value` run configuration.
//!
//! Values are layered as built-in defaults < profile < config file <
//! trailing `key=value` arguments < command-line flags. Every command only
//! accepts the keys in its own table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Generate,
    Eval,
    Analyze,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
        }
    }

    /// Known keys with their defaults.
    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::Synth => &[
                ("seed", "0"),
                ("out", "data"),
                ("image_size", "32"),
                ("count", "512"),
                ("cells_per_side", "4"),
                ("min_objects", "3"),
                ("max_objects", "6"),
            ],
            Command::Train => &[
                ("seed", "0"),
                ("out", "runs/train"),
                ("profile", "none"),
                ("data_x", "data/domain_x"),
                ("data_y", "data/domain_y"),
                ("image_size", "32"),
                ("base_filters", "16"),
                ("latent_dim", "1000"),
                ("batch_size", "16"),
                ("steps", "3000"),
                ("lr", "0.0002"),
                ("beta1", "0.5"),
                ("beta2", "0.9"),
                ("adam_epsilon", "1e-8"),
                ("margin", "1"),
                ("dist_metric", "cosine"),
                ("l2_weight", "0"),
                ("adv_weight", "1"),
                ("travel_weight", "1"),
                ("directions", "both"),
                ("siamese_sharing", "per_direction"),
                ("checkpoint_every", "500"),
                ("log_every", "100"),
                ("resume", ""),
            ],
            Command::Generate => &[
                ("seed", "0"),
                ("out", "runs/generate"),
                ("checkpoint", "runs/train/latest.trvl"),
                ("input", "data/domain_x"),
                ("mode", "translate"),
                ("direction", "xy"),
                ("count", "16"),
                ("image_size", "0"),
                ("cells_per_side", "4"),
            ],
            Command::Eval => &[
                ("seed", "0"),
                ("out", "runs/eval"),
                ("checkpoint", "runs/train/latest.trvl"),
                ("data_x", "data/domain_x"),
                ("data_y", "data/domain_y"),
                ("count", "256"),
                ("metric", "all"),
                ("disc_steps", "300"),
                ("fid_dim", "64"),
            ],
            Command::Analyze => &[
                ("seed", "0"),
                ("out", "runs/analyze"),
                ("checkpoint", "runs/train/latest.trvl"),
                ("mode", "pca"),
                ("data_x", "data/domain_x"),
                ("data_y", "data/domain_y"),
                ("direction", "xy"),
                ("count", "64"),
                ("salience_count", "4"),
                ("tile", "1"),
            ],
        }
    }
}

/// Values a named profile substitutes for the defaults.
fn profile(
    command: Command,
    name: &str,
) -> Result<&'static [(&'static str, &'static str)], CliError> {
    match (command, name) {
        (_, "none") => Ok(&[]),
        (Command::Train, "smoke") => Ok(&[
            ("image_size", "16"),
            ("base_filters", "4"),
            ("steps", "50"),
            ("checkpoint_every", "25"),
            ("log_every", "10"),
        ]),
        _ => Err(CliError::usage(format!(
            "unknown profile `{name}` for {}",
            command.name()
        ))),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "{origin}:{}: expected key = value, got `{raw}`",
                i + 1
            ))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_override(arg: &str) -> Result<(String, String), CliError> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("expected key=value, got `{arg}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Explicit inputs to [`RunConfig::resolve`], lowest precedence first.
#[derive(Debug, Default)]
pub struct Layers {
    pub file: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub flags: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(command: Command, layers: &Layers) -> Result<Self, CliError> {
        let file_pairs = match &layers.file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                parse_pairs(&text, &path.display().to_string())?
            }
            None => Vec::new(),
        };
        let known: BTreeMap<&str, &str> = command.defaults().iter().copied().collect();
        let explicit: Vec<&(String, String)> = file_pairs
            .iter()
            .chain(&layers.overrides)
            .chain(&layers.flags)
            .collect();
        for (k, _) in &explicit {
            if !known.contains_key(k.as_str()) {
                let mut keys: Vec<&str> = known.keys().copied().collect();
                keys.sort_unstable();
                return Err(CliError::usage(format!(
                    "unknown key `{k}` for {} (known: {})",
                    command.name(),
                    keys.join(", ")
                )));
            }
        }
        let mut values: BTreeMap<String, String> = known
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let profile_name = explicit
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.as_str())
            .unwrap_or("none");
        for (k, v) in profile(command, profile_name)? {
            values.insert(k.to_string(), v.to_string());
        }
        for (k, v) in explicit {
            values.insert(k.clone(), v.clone());
        }
        Ok(Self { command, values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a {} key", self.command.name()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::usage(format!("bad value `{raw}` for {key}: {e}")))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    /// An empty value means "not set".
    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    /// One of `choices`, as written.
    pub fn choice(&self, key: &str, choices: &[&str]) -> Result<&str, CliError> {
        let raw = self.raw(key);
        if choices.contains(&raw) {
            Ok(raw)
        } else {
            Err(CliError::usage(format!(
                "{key} must be one of {}, got `{raw}`",
                choices.join("|")
            )))
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out")
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    /// Text that [`RunConfig::resolve`] reads back to the same configuration.
    pub fn echo(&self) -> String {
        let mut out = format!(
            "# transvec {} resolved configuration\n",
            self.command.name()
        );
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("resolved_config.txt");
        std::fs::write(&path, self.echo())
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }
}
