//! Seeded generators for small tasks that exercise the encoder.
//!
//! - `copy`: target equals the source.
//! - `reverse`: target is the source reversed.
//! - `associative-recall`: `k1 v1 k2 v2 … kn vn ? kq` with target `vq`.
//!   Keys are distinct within an instance. Key symbols `k0…` and value
//!   symbols `v0…` split the vocabulary in halves.
//! - `toy-entailment`: premise/hypothesis pairs over content words `w0…` and
//!   the marker `not`, labeled by [`entailment_label`].

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::corpus::{Labeled, Pair};

pub const QUERY_MARKER: &str = "?";
pub const NEGATION: &str = "not";
pub const PAIR_SEPARATOR: &str = "|";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    Copy,
    Reverse,
    AssociativeRecall,
    ToyEntailment,
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "reverse" => Ok(Self::Reverse),
            "associative-recall" | "assoc" => Ok(Self::AssociativeRecall),
            "toy-entailment" | "entail" => Ok(Self::ToyEntailment),
            _ => Err(Error::Config(format!(
                "unknown synthetic task `{s}` (copy, reverse, associative-recall, toy-entailment)"
            ))),
        }
    }
}

/// Sizes for [`gen_synthetic`]. For associative recall the lengths count
/// key-value pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub n: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(task: SynthTask, n: usize, vocab: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        Self {
            task,
            n,
            vocab,
            min_len,
            max_len,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqExample {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthData {
    Sequences(Vec<SeqExample>),
    Pairs(Vec<Pair>),
}

impl SynthData {
    pub fn len(&self) -> usize {
        match self {
            Self::Sequences(s) => s.len(),
            Self::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SeqExample {
    /// TSV form: the target sequence is the label column.
    pub fn to_labeled(&self) -> Labeled {
        Labeled {
            label: self.target.join(" "),
            tokens: self.source.clone(),
        }
    }

    pub fn from_labeled(l: &Labeled) -> Self {
        Self {
            source: l.tokens.clone(),
            target: l.label.split_whitespace().map(str::to_string).collect(),
        }
    }
}

fn symbols(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Key and value symbols of an associative-recall vocabulary of size `vocab`.
pub fn recall_symbols(vocab: usize) -> (Vec<String>, Vec<String>) {
    (symbols("k", vocab / 2), symbols("v", vocab - vocab / 2))
}

pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    let SynthSpec {
        task,
        n,
        vocab,
        min_len,
        max_len,
        seed,
    } = *spec;
    if vocab < 3 {
        return Err(Error::Config(format!("vocabulary of {vocab} symbols is too small (need at least 3)")));
    }
    if min_len == 0 || max_len < min_len {
        return Err(Error::Config(format!("invalid length range {min_len}..={max_len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        SynthTask::Copy | SynthTask::Reverse => {
            let syms = symbols("t", vocab);
            let data = (0..n)
                .map(|_| {
                    let len = rng.gen_range(min_len..=max_len);
                    let source: Vec<String> = (0..len).map(|_| syms[rng.gen_range(0..vocab)].clone()).collect();
                    let mut target = source.clone();
                    if task == SynthTask::Reverse {
                        target.reverse();
                    }
                    SeqExample { source, target }
                })
                .collect();
            Ok(SynthData::Sequences(data))
        }
        SynthTask::AssociativeRecall => {
            let (keys, values) = recall_symbols(vocab);
            if max_len > keys.len() {
                return Err(Error::Config(format!(
                    "{max_len} distinct keys requested from {} key symbols",
                    keys.len()
                )));
            }
            let data = (0..n)
                .map(|_| {
                    let pairs = rng.gen_range(min_len..=max_len);
                    let chosen: Vec<&String> = keys.choose_multiple(&mut rng, pairs).collect();
                    let mut source = Vec::with_capacity(2 * pairs + 2);
                    let mut vals = Vec::with_capacity(pairs);
                    for k in &chosen {
                        let v = &values[rng.gen_range(0..values.len())];
                        source.push((*k).clone());
                        source.push(v.clone());
                        vals.push(v.clone());
                    }
                    let q = rng.gen_range(0..pairs);
                    source.push(QUERY_MARKER.to_string());
                    source.push(chosen[q].clone());
                    SeqExample {
                        source,
                        target: vec![vals[q].clone()],
                    }
                })
                .collect();
            Ok(SynthData::Sequences(data))
        }
        SynthTask::ToyEntailment => {
            if vocab <= max_len {
                return Err(Error::Config(format!(
                    "toy entailment needs more than {max_len} content words, got {vocab}"
                )));
            }
            let words = symbols("w", vocab);
            let data = (0..n).map(|i| entailment_pair(&mut rng, &words, min_len, max_len, i % 3)).collect();
            Ok(SynthData::Pairs(data))
        }
    }
}

fn entailment_pair(rng: &mut ChaCha8Rng, words: &[String], min_len: usize, max_len: usize, class: usize) -> Pair {
    let len = rng.gen_range(min_len..=max_len);
    let premise: Vec<String> = words.choose_multiple(rng, len).cloned().collect();
    let outside: Vec<&String> = words.iter().filter(|w| !premise.contains(w)).collect();
    let hypothesis: Vec<String> = match class {
        0 => {
            let k = rng.gen_range(1..=len);
            premise.choose_multiple(rng, k).cloned().collect()
        }
        1 => {
            let k = rng.gen_range(1..=outside.len().min(max_len));
            let mut h = vec![NEGATION.to_string()];
            h.extend(outside.choose_multiple(rng, k).map(|w| (*w).clone()));
            h
        }
        _ => {
            let inside = premise.choose(rng).expect("nonempty premise").clone();
            let out = (*outside.choose(rng).expect("vocabulary exceeds premise")).clone();
            let mut h = if rng.gen_bool(0.5) {
                vec![NEGATION.to_string(), inside]
            } else {
                vec![inside, out.clone()]
            };
            if rng.gen_bool(0.5) {
                h.push(out);
            }
            h.shuffle(rng);
            h
        }
    };
    let label = entailment_label(&premise, &hypothesis).to_string();
    Pair {
        label,
        a: premise,
        b: hypothesis,
    }
}

/// `contradiction` when the hypothesis carries the negation marker and shares
/// no content word with the premise; `entailment` when it has no marker and
/// all its words occur in the premise; `neutral` otherwise.
pub fn entailment_label<S: AsRef<str>>(premise: &[S], hypothesis: &[S]) -> &'static str {
    let p: HashSet<&str> = premise.iter().map(AsRef::as_ref).collect();
    let negated = hypothesis.iter().any(|w| w.as_ref() == NEGATION);
    let mut content = hypothesis.iter().map(AsRef::as_ref).filter(|&w| w != NEGATION).peekable();
    if negated {
        if content.all(|w| !p.contains(w)) {
            "contradiction"
        } else {
            "neutral"
        }
    } else if content.peek().is_some() && content.all(|w| p.contains(w)) {
        "entailment"
    } else {
        "neutral"
    }
}

/// Premise, separator and hypothesis as one token sequence.
pub fn joined_pair(p: &Pair) -> Vec<String> {
    let mut t = p.a.clone();
    t.push(PAIR_SEPARATOR.to_string());
    t.extend(p.b.iter().cloned());
    t
}
