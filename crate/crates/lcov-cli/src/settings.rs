//! Option resolution shared by all subcommands.
//!
//! Precedence is built-in default < config file < explicit flag. A command
//! consumes every file key it understands with [`Settings::take`]; whatever
//! remains afterwards is unknown, and [`Settings::finish`] rejects it while
//! listing the keys that would have been accepted, so typos fail loudly
//! instead of silently falling back to a default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lcov_core::error::{Error, Result};

use crate::Common;

/// The key=value pairs of an optional config file, consumed key by key.
pub struct Settings {
    values: BTreeMap<String, String>,
    known: Vec<&'static str>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            Some(p) => lcov_core::io::parse_config_bytes(&lcov_core::io::read_file(p)?)?,
            None => BTreeMap::new(),
        };
        Ok(Settings {
            values,
            known: Vec::new(),
        })
    }

    /// Consume `key`, parsed as `T`; `None` when the file does not set it.
    pub fn take<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>> {
        self.known.push(key);
        match self.values.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{raw}'"))),
        }
    }

    /// Reject any keys the subcommand did not consume.
    pub fn finish(mut self) -> Result<()> {
        if let Some(unknown) = self.values.keys().next() {
            self.known.sort_unstable();
            return Err(Error::Config(format!(
                "unknown key '{unknown}' (valid keys: {})",
                self.known.join(", ")
            )));
        }
        Ok(())
    }
}

/// Fully resolved global options.
pub struct Run {
    pub seed: u64,
    pub deterministic: bool,
    pub threads: usize,
}

/// Resolve the global flags against the config file and environment. The
/// thread bound is validated and echoed for forward compatibility; current
/// kernels are sequential, so any bound yields identical output.
pub fn resolve_common(common: &Common, cfg: &mut Settings) -> Result<Run> {
    let seed = match common.seed {
        Some(s) => {
            cfg.take::<u64>("seed")?;
            s
        }
        None => cfg.take::<u64>("seed")?.unwrap_or(0),
    };
    let deterministic = common.deterministic || cfg.take::<bool>("deterministic")?.unwrap_or(false);
    let threads = match common.threads {
        Some(t) => {
            cfg.take::<usize>("threads")?;
            t
        }
        None => match cfg.take::<usize>("threads")? {
            Some(t) => t,
            None => match std::env::var("LCOV_THREADS") {
                Ok(raw) => raw.trim().parse().map_err(|_| {
                    Error::Config(format!("LCOV_THREADS must be a positive integer, got {raw:?}"))
                })?,
                Err(_) => 1,
            },
        },
    };
    if threads == 0 {
        return Err(Error::Config("threads must be >= 1".into()));
    }
    Ok(Run {
        seed,
        deterministic,
        threads,
    })
}

/// Build one `key=value` entry for the config echo or the summary line.
pub fn kv(key: &'static str, value: impl Display) -> (&'static str, String) {
    (key, value.to_string())
}

/// Echo the effective configuration, one sorted `config key=value` per line.
pub fn print_config(run: &Run, entries: &[(&'static str, String)]) {
    let mut all = vec![
        kv("seed", run.seed),
        kv("deterministic", run.deterministic),
        kv("threads", run.threads),
    ];
    all.extend_from_slice(entries);
    all.sort_by(|a, b| a.0.cmp(b.0));
    for (k, v) in all {
        println!("config {k}={v}");
    }
}

/// The single result line every subcommand ends with.
pub fn print_summary(entries: &[(&'static str, String)]) {
    let body: Vec<String> = entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("summary {}", body.join(" "));
}
