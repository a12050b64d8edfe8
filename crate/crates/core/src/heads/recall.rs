use crate::autodiff::{Graph, Var};
use crate::cells::Init;
use crate::error::{Error, Result};
use crate::nse::{EncodeOptions, Encoding, NseConfig, NseEncoder};
use crate::tensor::Real;

use super::{attend_over, nonempty};

/// Answers a query by looking it up in the encoder's final memory.
///
/// The sequence is encoded as usual; then the last token's vector attends
/// over the final memory slots, and each candidate answer is scored by the
/// dot product of its vector with the retrieved content. The model has no
/// parameters beyond the encoder's, so candidate vectors (typically rows of
/// a trainable embedding table) double as the output layer.
#[derive(Clone, Debug)]
pub struct RecallModel {
    pub encoder: NseEncoder,
}

impl RecallModel {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: NseConfig) -> Result<Self> {
        if config.input_dim != config.dim {
            return Err(Error::Config(format!(
                "`{name}`: recall queries memory with raw token vectors, so input width {} must equal memory width {}",
                config.input_dim, config.dim
            )));
        }
        if config.aux_memories != 0 {
            return Err(Error::Config(format!("`{name}`: recall uses a single memory")));
        }
        Ok(Self {
            encoder: NseEncoder::new(init, &format!("{name}.enc"), config)?,
        })
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var], opts: &EncodeOptions) -> Result<Encoding> {
        nonempty("recall sequence", tokens)?;
        self.encoder.encode_sequence(g, tokens, vec![], opts)
    }

    /// One score per candidate, in candidate order.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var], candidates: &[Var]) -> Result<Var> {
        nonempty("candidate list", candidates)?;
        let enc = self.encode(g, tokens, &EncodeOptions::default())?;
        let query = *tokens.last().expect("checked nonempty");
        let (_, content) = attend_over(g, query, enc.memory.slots)?;
        let table = g.stack_cols(candidates)?;
        g.vecmat(content, table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;
    use crate::tensor::Tensor;

    #[test]
    fn one_score_per_candidate() {
        let mut p = ParameterSet::<f64>::new();
        let m = RecallModel::new(&mut Init::new(&mut p, 1), "r", NseConfig::new(4)).unwrap();
        let mut g = Graph::with_params(&p);
        let xs: Vec<Var> = (0..5)
            .map(|i| g.leaf(Tensor::vector(vec![i as f64 * 0.1, 0.2, -0.3, 0.4])))
            .collect();
        let l = m.logits(&mut g, &xs, &xs[..3]).unwrap();
        assert_eq!(g.value(l).len(), 3);
        assert!(matches!(m.logits(&mut g, &xs, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn projection_is_rejected() {
        let mut p = ParameterSet::<f64>::new();
        let mut c = NseConfig::new(4);
        c.input_dim = 6;
        assert!(matches!(RecallModel::new(&mut Init::new(&mut p, 1), "r", c), Err(Error::Config(_))));
    }
}
