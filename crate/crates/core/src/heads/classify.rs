use crate::autodiff::{Graph, Var};
use crate::cells::Init;
use crate::error::{Error, Result};
use crate::nse::{EncodeOptions, Encoding, NseConfig, NseEncoder};
use crate::tensor::Real;

use super::{nonempty, MlpHead};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub encoder: NseConfig,
    pub hidden: usize,
    pub classes: usize,
    pub out_dropout: f64,
}

impl ClassifierConfig {
    pub fn new(dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            encoder: NseConfig::new(dim),
            hidden,
            classes,
            out_dropout: 0.0,
        }
    }

    /// 300-d encoder; 1024 hidden units for binary labels, 300 otherwise.
    pub fn full_size(classes: usize) -> Self {
        let hidden = if classes == 2 { 1024 } else { 300 };
        Self::new(300, hidden, classes)
    }
}

/// One encoder, then a ReLU hidden layer and a softmax over `classes`.
#[derive(Clone, Debug)]
pub struct SentenceClassifier {
    pub encoder: NseEncoder,
    pub head: MlpHead,
    pub classes: usize,
}

impl SentenceClassifier {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &ClassifierConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {}", config.classes)));
        }
        let encoder = NseEncoder::new(init, &format!("{name}.enc"), config.encoder.clone())?;
        let head = MlpHead::new(
            init,
            &format!("{name}.mlp"),
            config.encoder.dim,
            config.hidden,
            config.classes,
            config.out_dropout,
        )?;
        Ok(Self {
            encoder,
            head,
            classes: config.classes,
        })
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var], opts: &EncodeOptions) -> Result<Encoding> {
        nonempty("sentence", tokens)?;
        self.encoder.encode_sequence(g, tokens, vec![], opts)
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var]) -> Result<Var> {
        let enc = self.encode(g, tokens, &EncodeOptions::default())?;
        self.head.forward(g, enc.last())
    }

    pub fn distribution<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var]) -> Result<Vec<f64>> {
        let l = self.logits(g, tokens)?;
        let p = g.softmax(l)?;
        Ok(g.value(p).to_f64_vec())
    }
}
