//! Heads paired with their token lookup and loss, as training objectives.

use crate::autodiff::Graph;
use crate::data::{SeqExample, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::{DocumentModel, Embedder, NliModel, QaModel, RecallModel, Seq2Seq, SentenceClassifier};
use crate::tensor::Real;
use crate::train::{Objective, Outcome};

/// Token ids and a class index.
pub type ClassExample = (Vec<usize>, usize);
/// Premise ids, hypothesis ids, class index.
pub type PairExample = (Vec<usize>, Vec<usize>, usize);
/// Question ids, answer ids, relevance.
pub type QaExample = (Vec<usize>, Vec<usize>, bool);
/// Sentences of token ids, class index.
pub type DocExample = (Vec<Vec<usize>>, usize);
/// Source ids, target ids (without begin/end markers).
pub type SeqPairExample = (Vec<usize>, Vec<usize>);
/// Sequence ids ending in the query, and the answer's index among the
/// candidates.
pub type RecallExample = (Vec<usize>, usize);

fn class_outcome<T: Real>(g: &mut Graph<'_, T>, logits: crate::Var, gold: usize) -> Result<Outcome> {
    let loss = g.softmax_xent(logits, gold)?;
    let correct = usize::from(g.value(logits).argmax() == gold);
    Ok(Outcome { loss, correct, total: 1 })
}

#[derive(Clone, Debug)]
pub struct ClassifyTask {
    pub embed: Embedder,
    pub model: SentenceClassifier,
}

impl<T: Real> Objective<T> for ClassifyTask {
    type Example = ClassExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &ClassExample) -> Result<Outcome> {
        let xs = self.embed.lookup(g, &ex.0)?;
        let logits = self.model.logits(g, &xs)?;
        class_outcome(g, logits, ex.1)
    }
}

#[derive(Clone, Debug)]
pub struct NliTask {
    pub embed: Embedder,
    pub model: NliModel,
}

impl<T: Real> Objective<T> for NliTask {
    type Example = PairExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &PairExample) -> Result<Outcome> {
        let p = self.embed.lookup(g, &ex.0)?;
        let h = self.embed.lookup(g, &ex.1)?;
        let logits = self.model.logits(g, &p, &h)?;
        class_outcome(g, logits, ex.2)
    }
}

#[derive(Clone, Debug)]
pub struct QaTask {
    pub embed: Embedder,
    pub model: QaModel,
}

impl<T: Real> Objective<T> for QaTask {
    type Example = QaExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &QaExample) -> Result<Outcome> {
        let q = self.embed.lookup(g, &ex.0)?;
        let a = self.embed.lookup(g, &ex.1)?;
        let logit = self.model.logit(g, &q, &a)?;
        let loss = g.sigmoid_xent(logit, ex.2)?;
        let predicted = g.value(logit).data()[0] > T::zero();
        Ok(Outcome {
            loss,
            correct: usize::from(predicted == ex.2),
            total: 1,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DocumentTask {
    pub embed: Embedder,
    pub model: DocumentModel,
}

impl<T: Real> Objective<T> for DocumentTask {
    type Example = DocExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &DocExample) -> Result<Outcome> {
        let sentences = ex
            .0
            .iter()
            .map(|s| self.embed.lookup(g, s))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.model.logits(g, &sentences)?;
        class_outcome(g, logits, ex.1)
    }

    fn bucket(&self, ex: &DocExample) -> usize {
        ex.0.len()
    }
}

/// Associative lookup: every example is scored against the same candidate
/// answers, given as token ids of `embed`.
#[derive(Clone, Debug)]
pub struct RecallTask {
    pub embed: Embedder,
    pub model: RecallModel,
    pub answers: Vec<usize>,
}

impl RecallTask {
    /// Maps generated instances to ids, with targets as candidate indices.
    pub fn examples(&self, vocab: &Vocabulary, data: &[SeqExample]) -> Result<Vec<RecallExample>> {
        data.iter()
            .map(|ex| {
                let [target] = ex.target.as_slice() else {
                    return Err(Error::Input(format!("recall target must be one token, got {:?}", ex.target)));
                };
                let id = vocab
                    .id(target)
                    .ok_or_else(|| Error::Vocabulary(format!("answer `{target}` is not in the vocabulary")))?;
                let idx = self
                    .answers
                    .iter()
                    .position(|&a| a == id)
                    .ok_or_else(|| Error::Input(format!("`{target}` is not a candidate answer")))?;
                Ok((vocab.encode(&ex.source), idx))
            })
            .collect()
    }
}

impl<T: Real> Objective<T> for RecallTask {
    type Example = RecallExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &RecallExample) -> Result<Outcome> {
        let xs = self.embed.lookup(g, &ex.0)?;
        let candidates = self.embed.lookup(g, &self.answers)?;
        let logits = self.model.logits(g, &xs, &candidates)?;
        class_outcome(g, logits, ex.1)
    }

    fn bucket(&self, ex: &RecallExample) -> usize {
        ex.0.len()
    }
}

/// Teacher-forced translation; accuracy counts correctly predicted target
/// tokens (including the end marker) under teacher forcing.
#[derive(Clone, Debug)]
pub struct Seq2SeqTask {
    pub source: Embedder,
    pub model: Seq2Seq,
}

impl Seq2SeqTask {
    /// Greedy decoding with dropout off.
    pub fn translate<T: Real>(&self, g: &mut Graph<'_, T>, source: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let xs = self.source.lookup(g, source)?;
        self.model.greedy(g, &xs, max_len)
    }
}

impl<T: Real> Objective<T> for Seq2SeqTask {
    type Example = SeqPairExample;

    fn forward(&self, g: &mut Graph<'_, T>, ex: &SeqPairExample) -> Result<Outcome> {
        let xs = self.source.lookup(g, &ex.0)?;
        let logits = self.model.forced_logits(g, &xs, &ex.1)?;
        let eos = self.model.config.eos;
        let gold: Vec<usize> = ex.1.iter().copied().chain(std::iter::once(eos)).collect();
        let mut terms = Vec::with_capacity(gold.len());
        let mut correct = 0;
        for (&l, &y) in logits.iter().zip(&gold) {
            terms.push(g.softmax_xent(l, y)?);
            correct += usize::from(g.value(l).argmax() == y);
        }
        let total = g.add_all(&terms)?;
        let loss = g.scale(total, T::from_f64c(1.0 / terms.len() as f64))?;
        Ok(Outcome {
            loss,
            correct,
            total: gold.len(),
        })
    }

    fn bucket(&self, ex: &SeqPairExample) -> usize {
        ex.0.len()
    }
}

/// Fraction of target positions where the greedy output matches; positions
/// past the end of the output count as wrong.
pub fn greedy_token_accuracy<T: Real>(
    task: &Seq2SeqTask,
    params: &crate::ParameterSet<T>,
    data: &[SeqPairExample],
) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for (src, tgt) in data {
        let mut g = Graph::with_params(params);
        let out = task.translate(&mut g, src, tgt.len() + 2)?;
        correct += tgt.iter().zip(&out).filter(|(a, b)| a == b).count();
        total += tgt.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}
