use crate::autodiff::{Graph, Var};
use crate::cells::Init;
use crate::error::{Error, Result};
use crate::nse::{EncodeOptions, NseConfig, NseEncoder};
use crate::tensor::Real;

use super::{attend_over, nonempty, MlpHead, PairFeatures};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NliVariant {
    /// Premise and hypothesis encoded independently, each with its own memory.
    Nse,
    /// Premise memory attached as an auxiliary memory while encoding the hypothesis.
    Mma,
    /// As `Mma`, and the premise side of the features is an attention-blended
    /// premise output vector instead of the last premise state.
    MmaAttention,
}

impl std::str::FromStr for NliVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nse" => Ok(Self::Nse),
            "mma" => Ok(Self::Mma),
            "mma-attention" => Ok(Self::MmaAttention),
            _ => Err(Error::Config(format!("unknown NLI variant `{s}` (nse, mma, mma-attention)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NliConfig {
    pub variant: NliVariant,
    pub encoder: NseConfig,
    pub hidden: usize,
    pub out_dropout: f64,
}

impl NliConfig {
    pub fn new(variant: NliVariant, dim: usize, hidden: usize) -> Self {
        Self {
            variant,
            encoder: NseConfig::new(dim),
            hidden,
            out_dropout: 0.0,
        }
    }

    /// Full-size setting: 300-d, 1024-unit hidden layer, 30% dropout on the
    /// read/write outputs and the last linear layer. The composition MLP gets
    /// one 1024-unit intermediate layer.
    pub fn full_size(variant: NliVariant) -> Self {
        let mut c = Self::new(variant, 300, 1024);
        c.encoder.compose_hidden = vec![1024];
        c.encoder.rw_dropout = 0.3;
        c.out_dropout = 0.3;
        c
    }
}

/// Three-way classifier over (premise, hypothesis) pairs.
#[derive(Clone, Debug)]
pub struct NliModel {
    pub variant: NliVariant,
    pub premise: NseEncoder,
    /// Present for the shared-memory variants; the plain variant reuses `premise`.
    pub hypothesis: Option<NseEncoder>,
    pub head: MlpHead,
}

impl NliModel {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &NliConfig) -> Result<Self> {
        let mut enc = config.encoder.clone();
        enc.aux_memories = 0;
        let premise = NseEncoder::new(init, &format!("{name}.premise"), enc.clone())?;
        let hypothesis = match config.variant {
            NliVariant::Nse => None,
            NliVariant::Mma | NliVariant::MmaAttention => {
                Some(NseEncoder::new(init, &format!("{name}.hypothesis"), enc.with_aux(1))?)
            }
        };
        let k = config.encoder.dim;
        let head = MlpHead::new(init, &format!("{name}.mlp"), 4 * k, config.hidden, 3, config.out_dropout)?;
        Ok(Self {
            variant: config.variant,
            premise,
            hypothesis,
            head,
        })
    }

    /// Class scores (pre-softmax) in [`NLI_LABELS`](super::NLI_LABELS) order.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, premise: &[Var], hypothesis: &[Var]) -> Result<Var> {
        nonempty("premise", premise)?;
        nonempty("hypothesis", hypothesis)?;
        let opts = EncodeOptions::default();
        let p = self.premise.encode_sequence(g, premise, vec![], &opts)?;
        let (u, v) = match (&self.hypothesis, self.variant) {
            (None, _) => {
                let h = self.premise.encode_sequence(g, hypothesis, vec![], &opts)?;
                (p.last(), h.last())
            }
            (Some(enc), variant) => {
                let h = enc.encode_sequence(g, hypothesis, vec![p.memory], &opts)?;
                let hh = h.last();
                let u = if variant == NliVariant::MmaAttention {
                    let keys = g.stack_cols(&p.outputs)?;
                    attend_over(g, hh, keys)?.1
                } else {
                    p.last()
                };
                (u, hh)
            }
        };
        let f = PairFeatures::new(g, u, v)?;
        self.head.forward(g, f.combined)
    }

    pub fn distribution<T: Real>(&self, g: &mut Graph<'_, T>, premise: &[Var], hypothesis: &[Var]) -> Result<Vec<f64>> {
        let l = self.logits(g, premise, hypothesis)?;
        let p = g.softmax(l)?;
        Ok(g.value(p).to_f64_vec())
    }
}
