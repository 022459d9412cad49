//! Flat `key = value` configuration files. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let c = ConfigFile::parse("# comment\nlr = 0.001\nval-fraction=0.25 # trailing\n\nvariant = dsc\n").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(c.get::<f64>("val_fraction").unwrap(), Some(0.25));
        assert_eq!(c.get::<String>("variant").unwrap().as_deref(), Some("dsc"));
        assert_eq!(c.get::<usize>("batch").unwrap(), None);
        assert!(c.get::<usize>("variant").is_err());
        assert!(c.check_keys(&["lr", "val_fraction"]).is_err());
        assert!(ConfigFile::parse("no equals sign").is_err());
    }
}
