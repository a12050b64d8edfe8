use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Truncates to the first `len` tokens or appends `pad` up to `len`.
pub fn pad_or_crop<S: Clone>(tokens: &[S], len: usize, pad: S) -> Vec<S> {
    let mut out: Vec<S> = tokens.iter().take(len).cloned().collect();
    out.resize(len, pad);
    out
}

/// Whitespace tokenization, optionally lowercased.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// `label<TAB>text-a<TAB>text-b`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub label: String,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

/// `label<TAB>text`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeled {
    pub label: String,
    pub tokens: Vec<String>,
}

/// Parsed records plus the number of malformed lines that were skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loaded<R> {
    pub records: Vec<R>,
    pub skipped: usize,
}

fn read_tsv<R>(path: &Path, fields: usize, lowercase: bool, make: impl Fn(Vec<Vec<String>>, String) -> R) -> Result<Loaded<R>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut lines = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != fields || parts[0].trim().is_empty() {
            skipped += 1;
            continue;
        }
        let texts: Vec<Vec<String>> = parts[1..].iter().map(|p| tokenize(p, lowercase)).collect();
        if texts.iter().any(Vec::is_empty) {
            skipped += 1;
            continue;
        }
        records.push(make(texts, parts[0].trim().to_string()));
    }
    if lines == 0 {
        return Err(Error::Input(format!("{} has no records", path.display())));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed lines", path.display());
    }
    Ok(Loaded { records, skipped })
}

pub fn read_pairs(path: impl AsRef<Path>, lowercase: bool) -> Result<Loaded<Pair>> {
    read_tsv(path.as_ref(), 3, lowercase, |mut t, label| {
        let b = t.pop().expect("two texts");
        let a = t.pop().expect("two texts");
        Pair { label, a, b }
    })
}

pub fn read_labeled(path: impl AsRef<Path>, lowercase: bool) -> Result<Loaded<Labeled>> {
    read_tsv(path.as_ref(), 2, lowercase, |mut t, label| Labeled {
        label,
        tokens: t.pop().expect("one text"),
    })
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.label, p.a.join(" "), p.b.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled(path: impl AsRef<Path>, items: &[Labeled]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in items {
        writeln!(w, "{}\t{}", l.label, l.tokens.join(" "))?;
    }
    w.flush()?;
    Ok(())
}
