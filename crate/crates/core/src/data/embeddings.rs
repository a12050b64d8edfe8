use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::vocab::Vocabulary;

/// Pre-trained word vectors. Unknown tokens map to the zero vector.
///
/// The text format has one entry per line: the token followed by `k`
/// decimal numbers, separated by single spaces.
///
/// ```text
/// the 0.418 0.24968 -0.41242
/// , 0.013441 0.23682 -0.16899
/// ```
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    /// Vector used for `<pad>`; zero unless set.
    pad: Vec<f32>,
    zero: Vec<f32>,
    /// Lines whose token had already been seen (the first occurrence wins).
    pub duplicates: usize,
    /// Fixed by default; when true, tables built from it are trainable.
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
            pad: vec![0.0; dim],
            zero: vec![0.0; dim],
            duplicates: 0,
            trainable: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Adds a vector; returns false (and counts a duplicate) if the token exists.
    pub fn insert(&mut self, token: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::dim(format!("vector of length {} for a {}-d table", vector.len(), self.dim)));
        }
        if self.index.contains_key(token) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(token.to_string(), self.data.len() / self.dim);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn set_pad(&mut self, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim(format!("pad vector of length {} for a {}-d table", vector.len(), self.dim)));
        }
        self.pad = vector;
        Ok(())
    }

    /// Never fails: `<pad>` gives the padding vector, unknown tokens the zero vector.
    pub fn lookup(&self, token: &str) -> &[f32] {
        if token == super::vocab::PAD {
            return &self.pad;
        }
        match self.index.get(token) {
            Some(&r) => &self.data[r * self.dim..(r + 1) * self.dim],
            None => &self.zero,
        }
    }

    /// A `|vocab| × k` matrix whose row `i` is the vector of token `i`.
    pub fn matrix_for<T: Real>(&self, vocab: &Vocabulary) -> Tensor<T> {
        let mut data = Vec::with_capacity(vocab.len() * self.dim);
        for t in vocab.tokens() {
            data.extend(self.lookup(t).iter().map(|&x| T::from_f64c(x as f64)));
        }
        Tensor::matrix(vocab.len(), self.dim, data).expect("rows × dim entries")
    }
}

/// Reads a word-vector text file, requiring exactly `k` values per line.
/// The first line with a different count, or an unparsable number, is
/// reported with its line number. An empty line is skipped.
pub fn load_embeddings(path: impl AsRef<Path>, k: usize) -> Result<EmbeddingTable> {
    if k == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut table = EmbeddingTable::new(k);
    let mut buf = vec![0f32; k];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("nonempty line has a field");
        let mut n = 0;
        for f in fields {
            if n < k {
                buf[n] = f.parse().map_err(|_| Error::Format {
                    line: lineno,
                    detail: format!("`{f}` is not a number"),
                })?;
            }
            n += 1;
        }
        if n != k {
            return Err(Error::Format {
                line: lineno,
                detail: format!("expected {k} values after the token, found {n}"),
            });
        }
        table.insert(token, &buf)?;
    }
    if table.is_empty() {
        return Err(Error::Format {
            line: 0,
            detail: "no embedding vectors in file".into(),
        });
    }
    if table.duplicates > 0 {
        log::warn!("{} duplicate tokens ignored in embedding file", table.duplicates);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_looks_up() {
        let f = file("a 1.0 2.0\n");
        let t = load_embeddings(f.path(), 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup("a"), &[1.0, 2.0]);
        assert_eq!(t.lookup("missing"), &[0.0, 0.0]);
        assert_eq!(t.lookup(super::super::vocab::PAD), &[0.0, 0.0]);
    }

    #[test]
    fn ragged_file_names_first_bad_line() {
        let f = file("a 1 2\nb 1 2 3\nc 1\n");
        match load_embeddings(f.path(), 2).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn duplicates_keep_first() {
        let f = file("a 1 2\na 3 4\n");
        let t = load_embeddings(f.path(), 2).unwrap();
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.lookup("a"), &[1.0, 2.0]);
    }

    #[test]
    fn empty_file_is_format_error() {
        let f = file("\n\n");
        assert!(matches!(load_embeddings(f.path(), 2), Err(Error::Format { .. })));
        assert!(matches!(load_embeddings("/nonexistent/vectors.txt", 2), Err(Error::Io(_))));
    }
}
