use crate::autodiff::{Graph, Var};
use crate::cells::Init;
use crate::error::{Error, Result};
use crate::nse::{EncodeOptions, NseConfig, NseEncoder};
use crate::tensor::Real;

use super::{attend_over, nonempty, MlpHead, PairFeatures};

#[derive(Clone, Debug, PartialEq)]
pub struct QaConfig {
    pub encoder: NseConfig,
    pub hidden: usize,
    pub out_dropout: f64,
}

impl QaConfig {
    pub fn new(dim: usize, hidden: usize) -> Self {
        Self {
            encoder: NseConfig::new(dim),
            hidden,
            out_dropout: 0.0,
        }
    }

    /// 300-d inputs mapped to 512-d two-layer read/write LSTMs with 40%
    /// dropout after the word vectors.
    pub fn full_size() -> Self {
        let mut c = Self::new(512, 512);
        c.encoder.input_dim = 300;
        c.encoder.read_layers = 2;
        c.encoder.write_layers = 2;
        c.encoder.input_dropout = 0.4;
        c
    }
}

/// Scores a candidate answer for a question: answer encoded first, question
/// encoded over its own memory plus the answer memory, with attention over
/// the answer outputs.
#[derive(Clone, Debug)]
pub struct QaModel {
    pub answer: NseEncoder,
    pub question: NseEncoder,
    pub head: MlpHead,
}

impl QaModel {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &QaConfig) -> Result<Self> {
        let mut enc = config.encoder.clone();
        enc.aux_memories = 0;
        let answer = NseEncoder::new(init, &format!("{name}.answer"), enc.clone())?;
        let question = NseEncoder::new(init, &format!("{name}.question"), enc.with_aux(1))?;
        let head = MlpHead::new(
            init,
            &format!("{name}.mlp"),
            4 * config.encoder.dim,
            config.hidden,
            1,
            config.out_dropout,
        )?;
        Ok(Self { answer, question, head })
    }

    /// Pre-sigmoid score, shape `(1,)`.
    pub fn logit<T: Real>(&self, g: &mut Graph<'_, T>, question: &[Var], answer: &[Var]) -> Result<Var> {
        nonempty("question", question)?;
        nonempty("answer", answer)?;
        let opts = EncodeOptions::default();
        let a = self.answer.encode_sequence(g, answer, vec![], &opts)?;
        let q = self.question.encode_sequence(g, question, vec![a.memory], &opts)?;
        let hq = q.last();
        let keys = g.stack_cols(&a.outputs)?;
        let (_, ha) = attend_over(g, hq, keys)?;
        let f = PairFeatures::new(g, hq, ha)?;
        self.head.forward(g, f.combined)
    }

    /// `p(y = 1 | question, answer)`.
    pub fn score<T: Real>(&self, g: &mut Graph<'_, T>, question: &[Var], answer: &[Var]) -> Result<f64> {
        let l = self.logit(g, question, answer)?;
        let p = g.sigmoid(l)?;
        Ok(g.value(p).to_f64_vec()[0])
    }
}

/// Candidates sorted by descending score, ties broken by original position.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check(scores: &[f64], relevant: &[bool]) -> Result<()> {
    if scores.len() != relevant.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), relevant.len())));
    }
    Ok(())
}

/// Average precision of one question's candidate ranking. Questions with no
/// relevant candidate score 0.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    check(scores, relevant)?;
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// `1 / rank` of the first relevant candidate, 0 if there is none.
pub fn reciprocal_rank(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    check(scores, relevant)?;
    Ok(ranking(scores)
        .iter()
        .position(|&i| relevant[i])
        .map_or(0.0, |r| 1.0 / (r + 1) as f64))
}

/// MAP over questions, each given as (candidate scores, relevance labels).
pub fn mean_average_precision(groups: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    mean_over(groups, average_precision)
}

pub fn mean_reciprocal_rank(groups: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    mean_over(groups, reciprocal_rank)
}

fn mean_over(groups: &[(Vec<f64>, Vec<bool>)], f: fn(&[f64], &[bool]) -> Result<f64>) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Input("no questions to rank".into()));
    }
    let mut sum = 0.0;
    for (s, r) in groups {
        sum += f(s, r)?;
    }
    Ok(sum / groups.len() as f64)
}
