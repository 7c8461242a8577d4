//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, keys are case-sensitive and
//! `-` is read as `_`. Values are parsed by the option that consumes them:
//! integers, floats, booleans (`true`/`false`) or comma-separated lists.
//! Command-line flags override file values.

use gls_adapt::io::parse_list;
use gls_adapt::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const SEED_ENV: &str = "GLS_ADAPT_SEED";

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, message: format!("expected `key = value`, got {line:?}") });
            };
            let key = normalize(key);
            if key.is_empty() {
                return Err(Error::Parse { line: i + 1, message: "empty key".into() });
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Parse { line: i + 1, message: format!("duplicate key {key:?}") });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// The flag value if given, else the parsed file value.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::ConfigInvalid(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// A switch is on when its flag is present or the file sets it to `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn list(&self, flag: Option<&str>, key: &str) -> Result<Option<Vec<f64>>> {
        match flag.or_else(|| self.raw(key)) {
            Some(v) => parse_list(v).map(Some),
            None => Ok(None),
        }
    }

    pub fn sizes(&self, flag: Option<&str>, key: &str) -> Result<Option<Vec<usize>>> {
        match flag.or_else(|| self.raw(key)) {
            Some(v) => v
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| Error::ConfigInvalid(format!("bad size {t:?} in {key}"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            None => Ok(None),
        }
    }

    pub fn words(&self, flag: Option<&str>, key: &str) -> Option<Vec<String>> {
        flag.or_else(|| self.raw(key))
            .map(|v| v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect())
    }

    /// Flag, then file, then `GLS_ADAPT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={v:?} is not an integer"))),
            Err(_) => Ok(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let s = Settings::parse("# run\nepochs = 5\nlearning-rate=0.1  # inline\n\nlayers = 8, 4\n").unwrap();
        assert_eq!(s.get::<usize>(None, "epochs").unwrap(), Some(5));
        assert_eq!(s.get::<f64>(None, "learning_rate").unwrap(), Some(0.1));
        assert_eq!(s.sizes(None, "layers").unwrap(), Some(vec![8, 4]));
        assert_eq!(s.get::<usize>(Some(9), "epochs").unwrap(), Some(9));
        assert_eq!(s.get::<usize>(None, "missing").unwrap(), None);
    }

    #[test]
    fn reports_bad_lines() {
        match Settings::parse("a = 1\nnot a pair\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Settings::parse("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        let s = Settings::parse("epochs = five").unwrap();
        assert!(s.get::<usize>(None, "epochs").is_err());
    }

    #[test]
    fn switches() {
        let s = Settings::parse("bounds = true\nquiet = false").unwrap();
        assert!(s.switch(false, "bounds").unwrap());
        assert!(!s.switch(false, "quiet").unwrap());
        assert!(s.switch(true, "quiet").unwrap());
        assert!(!s.switch(false, "absent").unwrap());
    }
}
