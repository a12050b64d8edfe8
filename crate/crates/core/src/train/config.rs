use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::Adam;

/// Flat `key = value` configuration text. Blank lines and lines starting with
/// `#` are ignored; a ` #` after a value starts a trailing comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: IndexMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Format { line: i + 1, detail };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(bad("empty key".into()));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`"))),
            None => Ok(default),
        }
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        v.parse().map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`")))
    }

    /// Comma-separated list; an absent key or empty value gives an empty list.
    pub fn list<V: FromStr>(&self, key: &str) -> Result<Vec<V>> {
        match self.get(key) {
            None | Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("cannot parse element `{p}` of `{key}`")))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    /// Dropout after the token vectors.
    pub input_dropout: f64,
    /// Dropout on read and write LSTM outputs.
    pub rw_dropout: f64,
    /// Dropout before the last linear layer.
    pub out_dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Re-evaluate train accuracy with dropout off after each epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            l2: 0.0,
            input_dropout: 0.0,
            rw_dropout: 0.0,
            out_dropout: 0.0,
            epochs: 10,
            seed: 1,
            precision: Precision::F32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            l2: kv.get_or("l2", d.l2)?,
            input_dropout: kv.get_or("input_dropout", d.input_dropout)?,
            rw_dropout: kv.get_or("rw_dropout", d.rw_dropout)?,
            out_dropout: kv.get_or("out_dropout", d.out_dropout)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            seed: kv.get_or("seed", d.seed)?,
            precision: kv.get_or("precision", d.precision)?,
            beta1: kv.get_or("beta1", d.beta1)?,
            beta2: kv.get_or("beta2", d.beta2)?,
            eps: kv.get_or("eps", d.eps)?,
            eval_train: kv.get_or("eval_train", d.eval_train)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, r) in [
            ("l2", self.l2),
            ("input_dropout", self.input_dropout),
            ("rw_dropout", self.rw_dropout),
            ("out_dropout", self.out_dropout),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text() {
        let kv = KeyValues::parse("# header\nlr = 0.01\n\nbatch_size=4 # trailing\nname = a=b\n").unwrap();
        assert_eq!(kv.get("lr"), Some("0.01"));
        assert_eq!(kv.get("name"), Some("a=b"));
        let c = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!((c.lr, c.batch_size), (0.01, 4));
    }

    #[test]
    fn reports_bad_lines() {
        let e = KeyValues::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }));
        let e = KeyValues::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }));
    }

    #[test]
    fn validates_rates() {
        let kv = KeyValues::parse("rw_dropout = 1.0").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("lr = -1").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
    }
}
