use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use graphyr::{Error, Result};

/// Keys accepted in a config file. Dashes in flag names become underscores.
const KEYS: &[&str] = &[
    "grid",
    "count",
    "seed",
    "band",
    "pv",
    "dataset",
    "split",
    "split_seed",
    "oracle",
    "out",
    "epochs",
    "batch_size",
    "lr",
    "committee",
    "validate_every",
    "layers",
    "hidden",
    "line_hidden",
    "switch_hidden",
    "dropout",
    "lambda",
    "mu",
    "insi_tau",
    "insi_mu",
    "rounding",
    "supervision",
    "checkpoints",
    "force_open",
    "force_closed",
    "epsilon",
    "label",
];

/// Values from an optional flat `key = value` file. Flags take precedence:
/// every lookup receives the flag value first.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    /// Resolved values, recorded for the run manifest.
    pub used: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("unknown key `{key}`"),
                });
            }
            file.insert(key, value.trim().to_string());
        }
        Ok(Settings {
            file,
            used: BTreeMap::new(),
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.file
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Validation(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    /// Flag, then file, then `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.used.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) without a default.
    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => self
                .file_value(key)?
                .ok_or_else(|| Error::Validation(format!("missing required setting `{key}`")))?,
        };
        self.used.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Repeatable flag; the file form is comma-separated.
    pub fn list<T: FromStr + Display>(&mut self, key: &str, flag: Vec<T>) -> Result<Vec<T>> {
        let v = if !flag.is_empty() {
            flag
        } else {
            match self.file.get(key) {
                None => Vec::new(),
                Some(s) => s
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Validation(format!("config key `{key}`: cannot parse `{s}`")))
                    })
                    .collect::<Result<_>>()?,
            }
        };
        if !v.is_empty() {
            let joined: Vec<String> = v.iter().map(ToString::to_string).collect();
            self.used.insert(key.to_string(), joined.join(","));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let mut s = Settings::parse("epochs = 7\n# comment\nlr=0.01\nbatch-size = 3 # trailing\n").unwrap();
        assert_eq!(s.get("epochs", Some(2usize), 1).unwrap(), 2);
        assert_eq!(s.get("lr", None, 1.0).unwrap(), 0.01);
        assert_eq!(s.get("batch_size", None::<usize>, 200).unwrap(), 3);
        assert_eq!(s.get("committee", None::<usize>, 10).unwrap(), 10);
        assert_eq!(s.used["epochs"], "2");
    }

    #[test]
    fn unknown_and_malformed_lines_rejected() {
        assert!(matches!(Settings::parse("speed = 3"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Settings::parse("\nepochs"), Err(Error::Parse { line: 2, .. })));
        let mut s = Settings::parse("epochs = many").unwrap();
        assert!(s.get("epochs", None::<usize>, 1).is_err());
    }

    #[test]
    fn lists_split_on_commas() {
        let mut s = Settings::parse("grid = t5, t5_variant").unwrap();
        assert_eq!(s.list::<String>("grid", vec![]).unwrap(), vec!["t5", "t5_variant"]);
        assert_eq!(s.list("grid", vec!["bw33".to_string()]).unwrap(), vec!["bw33"]);
        assert!(s.list::<usize>("force_open", vec![]).unwrap().is_empty());
    }
}
