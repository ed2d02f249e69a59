//! Flat `key=value` configuration: a file, then command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn parse_pair(item: &str) -> Result<(String, String)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("expected key=value, got {item:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("empty key in {item:?}");
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl Settings {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = parse_pair(line).with_context(|| format!("{}:{}", path.display(), no + 1))?;
                values.insert(k, v);
            }
        }
        for item in overrides {
            let (k, v) = parse_pair(item)?;
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        if !unknown.is_empty() {
            bail!("unknown configuration keys: {}", unknown.join(", "));
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| anyhow!("invalid value {v:?} for {key}")),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.values.get(key).ok_or_else(|| anyhow!("missing required key {key}"))?;
        v.parse().map_err(|_| anyhow!("invalid value {v:?} for {key}"))
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| anyhow!("invalid list entry {x:?} for {key}")))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.values.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "# comment\nn = 10\np=20\n").unwrap();
        let s = Settings::load(Some(&path), &["n=12".into()]).unwrap();
        assert_eq!(s.get::<usize>("n", 0).unwrap(), 12);
        assert_eq!(s.get::<usize>("p", 0).unwrap(), 20);
        assert!(s.reject_unknown(&["n", "p"]).is_ok());
        assert!(s.reject_unknown(&["n"]).is_err());
        assert!(Settings::load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn lists() {
        let s = Settings::load(None, &["r=1.5, 3".into()]).unwrap();
        assert_eq!(s.list::<f64>("r", &[]).unwrap(), vec![1.5, 3.0]);
        assert_eq!(s.list::<f64>("q", &[2.0]).unwrap(), vec![2.0]);
    }
}
