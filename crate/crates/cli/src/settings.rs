//! Resolution of defaults, config file and flags into one configuration.

use std::fmt;
use std::path::Path;

use ffnet::config::FlatConfig;
use ffnet::trainer::TrainConfig;
use ffnet::ArchConfig;

/// Keys that are neither architecture nor optimizer settings.
pub const EXTRA_KEYS: [&str; 11] = [
    "dataset",
    "data_dir",
    "records",
    "samples",
    "data_seed",
    "holdout",
    "ten_crop",
    "tol",
    "seeds",
    "warmup",
    "passes",
];

/// How a run ended, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs: exit 2.
    Usage(String),
    /// A check ran and did not pass: exit 1.
    Check(String),
    /// Anything else that stopped the run: exit 1.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) | Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Check(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ffnet::Error> for Failure {
    fn from(e: ffnet::Error) -> Self {
        use ffnet::Error::*;
        match e {
            Size(_)
            | Shape(_)
            | Range(_)
            | Label(_)
            | Format(_)
            | IncompatibleSpec { .. }
            | Config(_)
            | Io(_)
            | ZeroStd(_) => Failure::Usage(e.to_string()),
            NonFinite(_) | MissingTraces | MissingGradients(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn known_keys() -> Vec<&'static str> {
    ArchConfig::KEYS
        .iter()
        .chain(TrainConfig::KEYS.iter())
        .chain(EXTRA_KEYS.iter())
        .copied()
        .collect()
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub extra: FlatConfig,
    /// Keys given in the config file or on the command line.
    pub explicit: FlatConfig,
}

impl Resolved {
    /// Canonical text of every resolved value; feeding it back through
    /// `--config` reproduces the run.
    pub fn text(&self) -> String {
        let mut out = self.arch.canonical_text();
        out.push_str(&self.train.to_config().to_text());
        out.push_str(&self.extra.to_text());
        out
    }

    pub fn extra<T: std::str::FromStr>(&self, key: &str) -> Result<T, Failure> {
        self.extra
            .value::<T>(key)?
            .ok_or_else(|| Failure::Runtime(format!("no value for `{key}`")))
    }

    pub fn extra_str(&self, key: &str) -> Option<&str> {
        self.extra.get(key).filter(|v| !v.is_empty())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.get(key).is_some()
    }
}

/// Layers `defaults`, then the config file, then `flags`. Every key must be
/// known; `defaults` also decides which extra keys the subcommand echoes.
pub fn resolve(
    defaults: &FlatConfig,
    file: Option<&Path>,
    flags: &FlatConfig,
) -> Result<Resolved, Failure> {
    let known = known_keys();
    let mut explicit = match file {
        Some(p) => FlatConfig::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => FlatConfig::default(),
    };
    explicit.reject_unknown(&known)?;
    flags.reject_unknown(&known)?;
    for (k, v) in flags.iter() {
        explicit.set(k, v);
    }

    let mut merged = defaults.clone();
    for (k, v) in explicit.iter() {
        merged.set(k, v);
    }
    let mut arch = ArchConfig::default();
    arch.apply(&merged)?;
    let mut train = TrainConfig::default();
    train.apply(&merged)?;
    train.validate()?;
    let mut extra = FlatConfig::default();
    for key in EXTRA_KEYS {
        if let Some(v) = merged.get(key) {
            extra.set(key, v);
        }
    }
    Ok(Resolved {
        arch,
        train,
        extra,
        explicit,
    })
}
