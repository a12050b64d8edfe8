use crate::autodiff::{Graph, Var};
use crate::cells::{Init, Linear, LstmStack, LstmState};
use crate::error::{Error, Result};
use crate::nse::{Addressing, EncodeOptions, NseConfig, NseEncoder, NseState};
use crate::tensor::Real;

use super::{attend_over, nonempty, Embedder};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Seq2SeqVariant {
    /// LSTM encoder, attention LSTM decoder.
    LstmLstm,
    /// Encoder outputs feed the same attention LSTM decoder.
    NseLstm,
    /// The decoder is an encoder-style cell operating on the encoder's final
    /// memory, and also attends over the encoder outputs.
    NseNse,
}

impl std::str::FromStr for Seq2SeqVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm-lstm" => Ok(Self::LstmLstm),
            "nse-lstm" => Ok(Self::NseLstm),
            "nse-nse" => Ok(Self::NseNse),
            _ => Err(Error::Config(format!("unknown seq2seq variant `{s}` (lstm-lstm, nse-lstm, nse-nse)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqConfig {
    pub variant: Seq2SeqVariant,
    /// Encoder settings; `dim` is also the decoder and target-embedding width.
    pub encoder: NseConfig,
    pub tgt_vocab: usize,
    pub bos: usize,
    pub eos: usize,
    pub out_dropout: f64,
}

impl Seq2SeqConfig {
    pub fn new(variant: Seq2SeqVariant, dim: usize, tgt_vocab: usize, bos: usize, eos: usize) -> Self {
        Self {
            variant,
            encoder: NseConfig::new(dim),
            tgt_vocab,
            bos,
            eos,
            out_dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Lstm(LstmStack),
    Nse(NseEncoder),
}

#[derive(Clone, Debug)]
enum Decoder {
    Lstm(LstmStack),
    Nse(NseEncoder),
}

/// Decoding state carried between target positions.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// NSE decoder state; its memory starts as the encoder's final memory.
    pub nse: Option<NseState>,
    pub lstm: Vec<LstmState>,
    /// Encoder outputs stacked as columns, the attention keys.
    pub enc_outputs: Var,
    /// The focused vector from the most recent step.
    pub context: Option<Var>,
    pub prev: usize,
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub variant: Seq2SeqVariant,
    encoder: Encoder,
    decoder: Decoder,
    pub target: Embedder,
    pub out: Linear,
    pub config: Seq2SeqConfig,
}

impl Seq2Seq {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &Seq2SeqConfig) -> Result<Self> {
        let c = &config.encoder;
        let k = c.dim;
        if config.bos >= config.tgt_vocab || config.eos >= config.tgt_vocab {
            return Err(Error::Config("begin/end ids must lie inside the target vocabulary".into()));
        }
        let mut c = c.clone();
        c.aux_memories = 0;
        let encoder = match config.variant {
            Seq2SeqVariant::LstmLstm => {
                if c.input_dim != k {
                    return Err(Error::Config("the LSTM encoder needs input width = dim".into()));
                }
                Encoder::Lstm(LstmStack::new(init, &format!("{name}.enc"), k, k, c.write_layers)?)
            }
            _ => Encoder::Nse(NseEncoder::new(init, &format!("{name}.enc"), c.clone())?),
        };
        let target = Embedder::new(init, &format!("{name}.tgt_emb"), config.tgt_vocab, k, 0.1)?;
        let decoder = match config.variant {
            Seq2SeqVariant::NseNse => {
                let mut d = c.clone();
                d.input_dim = k;
                Decoder::Nse(NseEncoder::new(init, &format!("{name}.dec"), d)?)
            }
            _ => Decoder::Lstm(LstmStack::new(init, &format!("{name}.dec"), k, k, c.write_layers)?),
        };
        let out = Linear::new(init, &format!("{name}.out"), 2 * k, config.tgt_vocab)?;
        Ok(Self {
            variant: config.variant,
            encoder,
            decoder,
            target,
            out,
            config: config.clone(),
        })
    }

    /// The source encoder, unless it is the LSTM baseline.
    pub fn nse_encoder(&self) -> Option<&NseEncoder> {
        match &self.encoder {
            Encoder::Nse(e) => Some(e),
            Encoder::Lstm(_) => None,
        }
    }

    /// Encodes the source and initializes the decoder from the encoder's
    /// final state (and, for NSE-NSE, its final memory).
    pub fn start<T: Real>(&self, g: &mut Graph<'_, T>, source: &[Var]) -> Result<DecoderState> {
        nonempty("source", source)?;
        let (outputs, nse, lstm) = match &self.encoder {
            Encoder::Lstm(enc) => {
                let mut st = enc.zero_state(g);
                let mut outs = Vec::with_capacity(source.len());
                for &x in source {
                    let x = g.dropout(x, self.config.encoder.input_dropout)?;
                    outs.push(enc.step(g, x, &mut st)?);
                }
                (outs, None, st)
            }
            Encoder::Nse(enc) => {
                let e = enc.encode_sequence(g, source, vec![], &EncodeOptions::default())?;
                match &self.decoder {
                    Decoder::Nse(dec) => {
                        let mut s = dec.start(g, e.memory, vec![], None);
                        s.read = e.read;
                        s.write = e.write.clone();
                        (e.outputs, Some(s), Vec::new())
                    }
                    Decoder::Lstm(_) => (e.outputs, None, e.write),
                }
            }
        };
        let enc_outputs = g.stack_cols(&outputs)?;
        Ok(DecoderState {
            nse,
            lstm,
            enc_outputs,
            context: None,
            prev: self.config.bos,
        })
    }

    /// Consumes `state.prev` and returns next-token logits.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, state: &mut DecoderState) -> Result<Var> {
        self.step_with(g, state, Addressing::Soft)
    }

    pub fn step_with<T: Real>(&self, g: &mut Graph<'_, T>, state: &mut DecoderState, addressing: Addressing) -> Result<Var> {
        let x = self.target.lookup(g, &[state.prev])?[0];
        let d = match (&self.decoder, state.nse.as_mut()) {
            (Decoder::Nse(dec), Some(s)) => dec.step_with(g, s, x, addressing)?,
            (Decoder::Lstm(dec), _) => dec.step(g, x, &mut state.lstm)?,
            (Decoder::Nse(_), None) => return Err(Error::State("decoder state has no memory".into())),
        };
        let (_, ctx) = attend_over(g, d, state.enc_outputs)?;
        state.context = Some(ctx);
        let joined = g.concat(&[d, ctx])?;
        let joined = g.dropout(joined, self.config.out_dropout)?;
        self.out.forward(g, joined)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.config.tgt_vocab) {
            Some(i) => Err(Error::Vocabulary(format!(
                "target id {i} outside vocabulary of {}",
                self.config.tgt_vocab
            ))),
            None => Ok(()),
        }
    }

    /// Teacher-forced logits for each of `target` followed by the end marker
    /// (`target.len() + 1` positions).
    pub fn forced_logits<T: Real>(&self, g: &mut Graph<'_, T>, source: &[Var], target: &[usize]) -> Result<Vec<Var>> {
        self.check_ids(target)?;
        let mut state = self.start(g, source)?;
        let mut logits = Vec::with_capacity(target.len() + 1);
        for t in 0..=target.len() {
            logits.push(self.step(g, &mut state)?);
            if t < target.len() {
                state.prev = target[t];
            }
        }
        Ok(logits)
    }

    /// Mean word-level cross entropy over the target and the end marker.
    pub fn loss<T: Real>(&self, g: &mut Graph<'_, T>, source: &[Var], target: &[usize]) -> Result<Var> {
        let logits = self.forced_logits(g, source, target)?;
        let gold = target.iter().copied().chain(std::iter::once(self.config.eos));
        let terms = logits
            .iter()
            .zip(gold)
            .map(|(&l, y)| g.softmax_xent(l, y))
            .collect::<Result<Vec<_>>>()?;
        let total = g.add_all(&terms)?;
        g.scale(total, T::from_f64c(1.0 / terms.len() as f64))
    }

    /// Greedy decoding: the most probable token at each step, stopping at the
    /// end marker or after `max_len` tokens.
    pub fn greedy<T: Real>(&self, g: &mut Graph<'_, T>, source: &[Var], max_len: usize) -> Result<Vec<usize>> {
        let mut state = self.start(g, source)?;
        let mut out = Vec::new();
        while out.len() < max_len {
            let l = self.step(g, &mut state)?;
            let next = g.value(l).argmax();
            if next == self.config.eos {
                break;
            }
            out.push(next);
            state.prev = next;
        }
        Ok(out)
    }
}
