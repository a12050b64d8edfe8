use crate::autodiff::{Graph, Var};
use crate::cells::{Init, LstmStack};
use crate::error::{Error, Result};
use crate::nse::{EncodeOptions, NseConfig, NseEncoder};
use crate::tensor::Real;

use super::{nonempty, MlpHead};

/// The model stacked over the per-sentence vectors.
#[derive(Clone, Debug)]
pub enum TopModel {
    /// Memory initialized from the sentence vectors of the document.
    Nse(NseEncoder),
    Lstm(LstmStack),
}

/// Hierarchical classifier: a sentence-level encoder yields one vector per
/// sentence, and a top model reads those to a document vector.
#[derive(Clone, Debug)]
pub struct DocumentModel {
    pub sentence: NseEncoder,
    pub top: TopModel,
    pub head: MlpHead,
}

impl DocumentModel {
    /// `top_nse` picks an encoder over sentence vectors; otherwise a
    /// one-layer LSTM of the same width.
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        encoder: &NseConfig,
        top_nse: bool,
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {classes}")));
        }
        let k = encoder.dim;
        let sentence = NseEncoder::new(init, &format!("{name}.sentence"), encoder.clone())?;
        let top = if top_nse {
            let mut c = encoder.clone();
            c.input_dim = k;
            c.input_dropout = 0.0;
            TopModel::Nse(NseEncoder::new(init, &format!("{name}.top"), c)?)
        } else {
            TopModel::Lstm(LstmStack::new(init, &format!("{name}.top"), k, k, 1)?)
        };
        let head = MlpHead::new(init, &format!("{name}.mlp"), k, hidden, classes, 0.0)?;
        Ok(Self { sentence, top, head })
    }

    pub fn encode_document<T: Real>(&self, g: &mut Graph<'_, T>, sentences: &[Vec<Var>]) -> Result<Var> {
        if sentences.is_empty() {
            return Err(Error::Input("document has no sentences".into()));
        }
        let opts = EncodeOptions::default();
        let mut vectors = Vec::with_capacity(sentences.len());
        for s in sentences {
            nonempty("sentence", s)?;
            vectors.push(self.sentence.encode_sequence(g, s, vec![], &opts)?.last());
        }
        match &self.top {
            TopModel::Nse(enc) => Ok(enc.encode_sequence(g, &vectors, vec![], &opts)?.last()),
            TopModel::Lstm(lstm) => {
                let mut state = lstm.zero_state(g);
                let mut h = vectors[0];
                for &v in &vectors {
                    h = lstm.step(g, v, &mut state)?;
                }
                Ok(h)
            }
        }
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, sentences: &[Vec<Var>]) -> Result<Var> {
        let d = self.encode_document(g, sentences)?;
        self.head.forward(g, d)
    }
}
