//! Task heads built on the encoder: pairwise classification (NLI), answer
//! scoring (QA), sentence and document classification, encoder–decoder
//! translation with a shared memory, and key lookup in the final memory.
//!
//! Heads consume token vectors as graph variables, so the same head works
//! with fixed pre-trained vectors or a trainable [`Embedder`].

mod classify;
mod document;
mod nli;
mod qa;
mod recall;
mod seq2seq;

pub use classify::{ClassifierConfig, SentenceClassifier};
pub use document::{DocumentModel, TopModel};
pub use nli::{NliConfig, NliModel, NliVariant};
pub use qa::{average_precision, mean_average_precision, mean_reciprocal_rank, reciprocal_rank, QaConfig, QaModel};
pub use recall::RecallModel;
pub use seq2seq::{DecoderState, Seq2Seq, Seq2SeqConfig, Seq2SeqVariant};

use crate::autodiff::{Graph, Var};
use crate::cells::{Init, Linear};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParameterSet};
use crate::tensor::{Real, Tensor};

/// Index of each label in NLI class distributions.
pub const NLI_LABELS: [&str; 3] = ["entailment", "contradiction", "neutral"];

/// Interaction features of two sentence vectors.
#[derive(Clone, Copy, Debug)]
pub struct PairFeatures {
    /// `[u; v]`
    pub concat: Var,
    /// `|u - v|`
    pub absdiff: Var,
    /// `u ⊙ v`
    pub product: Var,
    /// `[u; v; |u - v|; u ⊙ v]`
    pub combined: Var,
}

impl PairFeatures {
    pub fn new<T: Real>(g: &mut Graph<'_, T>, u: Var, v: Var) -> Result<Self> {
        if g.shape(u) != g.shape(v) || !g.shape(u).is_vector() {
            return Err(Error::dim(format!("pair features of {} and {}", g.shape(u), g.shape(v))));
        }
        let concat = g.concat(&[u, v])?;
        let diff = g.sub(u, v)?;
        let absdiff = g.abs(diff)?;
        let product = g.mul(u, v)?;
        let combined = g.concat(&[concat, absdiff, product])?;
        Ok(Self {
            concat,
            absdiff,
            product,
            combined,
        })
    }
}

/// `out(dropout(relu(hidden(x))))`: the classification MLP shared by heads.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl MlpHead {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("`{name}`: dropout {dropout} outside [0, 1)")));
        }
        Ok(Self {
            hidden: Linear::new(init, &format!("{name}.hidden"), input, hidden)?,
            out: Linear::new(init, &format!("{name}.out"), hidden, output)?,
            dropout,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.hidden.forward(g, x)?;
        let a = g.relu(a)?;
        let a = g.dropout(a, self.dropout)?;
        self.out.forward(g, a)
    }
}

/// A trainable lookup table mapping token ids to vectors.
#[derive(Clone, Debug)]
pub struct Embedder {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedder {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, vocab: usize, dim: usize, scale: f64) -> Result<Self> {
        Ok(Self {
            table: init.embedding(name, vocab, dim, scale)?,
            vocab,
            dim,
        })
    }

    /// Wraps a prepared `vocab × dim` table (e.g. pre-trained vectors).
    pub fn from_table<T: Real>(
        params: &mut ParameterSet<T>,
        name: &str,
        table: Tensor<T>,
        trainable: bool,
    ) -> Result<Self> {
        let (vocab, dim) = table.shape().dims();
        if table.shape().is_vector() {
            return Err(Error::dim(format!("embedding table must be a matrix, got {}", table.shape())));
        }
        let id = params.add(name, ParamKind::Embedding, table)?;
        params.set_trainable(id, trainable);
        Ok(Self { table: id, vocab, dim })
    }

    pub fn lookup<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Vec<Var>> {
        let table = g.param(self.table)?;
        ids.iter()
            .map(|&id| {
                if id >= self.vocab {
                    return Err(Error::Vocabulary(format!("token id {id} outside vocabulary of {}", self.vocab)));
                }
                g.gather_row(table, id)
            })
            .collect()
    }
}

/// Dot-product attention of `query` over `keys` (stacked as columns); returns
/// the weights and the blended vector.
pub fn attend_over<T: Real>(g: &mut Graph<'_, T>, query: Var, keys: Var) -> Result<(Var, Var)> {
    let scores = g.vecmat(query, keys)?;
    let a = g.softmax(scores)?;
    let blended = g.matvec(keys, a)?;
    Ok((a, blended))
}

pub(crate) fn nonempty(what: &str, xs: &[Var]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Input(format!("{what} is empty")));
    }
    Ok(())
}
