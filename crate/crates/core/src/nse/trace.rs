//! Recorded key vectors and their line-oriented text format.
//!
//! ```text
//! # nse-trace v1
//! 0<TAB><S><TAB>0.100000,0.700000,0.200000<TAB>1
//! 1<TAB>A<TAB>0.600000,0.300000,0.100000<TAB>0<TAB>0.500000,0.500000
//! ```
//!
//! One record per encoding step: step index (from 0), input token, the key
//! vector over the encoder's own memory as comma-separated fixed 6-decimal
//! values, the argmax slot index, then zero or more auxiliary-memory key
//! vectors in the same encoding. Lines starting with `#` are comments; the
//! first line is always the header above. Lines end in `\n`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "# nse-trace v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub token: String,
    pub z: Vec<f64>,
    pub argmax: usize,
    pub aux: Vec<Vec<f64>>,
}

impl TraceRecord {
    pub fn new(step: usize, token: impl Into<String>, z: Vec<f64>, aux: Vec<Vec<f64>>) -> Self {
        let argmax = argmax(&z);
        Self {
            step,
            token: token.into(),
            z,
            argmax,
            aux,
        }
    }

    /// Highest-scoring slot other than `excluded`, ties to the lowest index.
    /// `None` when the memory has a single slot.
    pub fn best_excluding(&self, excluded: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.z.iter().enumerate() {
            if i == excluded {
                continue;
            }
            if best.is_none_or(|b| v > self.z[b]) {
                best = Some(i);
            }
        }
        best
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// All records of one encoding, plus the input tokens when they were known.
/// The tokens double as the initial slot contents, since memory starts as
/// the embeddings of the same sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub tokens: Option<Vec<String>>,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{}\t{}\t{}\t{}", r.step, r.token, join(&r.z), r.argmax);
            for a in &r.aux {
                s.push('\t');
                s.push_str(&join(a));
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output. Tokens are taken from the
    /// records, so the result always carries `tokens`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Format {
                    line: 1,
                    detail: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Format { line: lineno, detail };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 4 {
                return Err(bad(format!("expected at least 4 tab-separated fields, got {}", fields.len())));
            }
            let step = fields[0].parse().map_err(|_| bad(format!("bad step `{}`", fields[0])))?;
            let z = split_floats(fields[2]).map_err(bad)?;
            let argmax: usize = fields[3].parse().map_err(|_| bad(format!("bad argmax `{}`", fields[3])))?;
            if argmax >= z.len() {
                return Err(bad(format!("argmax {argmax} outside {} slots", z.len())));
            }
            let aux = fields[4..]
                .iter()
                .map(|f| split_floats(f))
                .collect::<std::result::Result<_, _>>()
                .map_err(bad)?;
            records.push(TraceRecord {
                step,
                token: fields[1].to_string(),
                z,
                argmax,
                aux,
            });
        }
        let tokens = Some(records.iter().map(|r| r.token.clone()).collect());
        Ok(Self { tokens, records })
    }
}

fn join(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    parts.join(",")
}

fn split_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_format_is_exact() {
        let t = Trace {
            tokens: Some(vec!["a".into(), "b".into()]),
            records: vec![
                TraceRecord::new(0, "a", vec![0.25, 0.75], vec![]),
                TraceRecord::new(1, "b", vec![0.5, 0.5], vec![vec![1.0]]),
            ],
        };
        assert_eq!(
            t.to_text(),
            "# nse-trace v1\n0\ta\t0.250000,0.750000\t1\n1\tb\t0.500000,0.500000\t0\t1.000000\n"
        );
        let back = Trace::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = Trace::parse("# nse-trace v1\n0\ta\t0.5,0.5\t7\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
        assert!(Trace::parse("nope\n").is_err());
    }

    #[test]
    fn best_excluding() {
        let r = TraceRecord::new(0, "x", vec![0.5, 0.3, 0.2], vec![]);
        assert_eq!(r.best_excluding(0), Some(1));
        assert_eq!(r.best_excluding(2), Some(0));
        let one = TraceRecord::new(0, "x", vec![1.0], vec![]);
        assert_eq!(one.best_excluding(0), None);
    }
}
