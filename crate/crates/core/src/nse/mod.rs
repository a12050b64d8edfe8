//! The encoder: memory initialization, attention-based read, composition,
//! write-back, and the multiple-memory (shared memory) variant.
//!
//! Per input `x_t` with memory `M` (`k×l`, one column per slot):
//!
//! ```text
//! o   = read_lstm(x)
//! z   = softmax(oᵀ M)            key vector over slots
//! m_r = M z                      soft-read slot
//! c   = compose(o, m_r)          (o, m_r, m_r¹, …) when auxiliary memories are attached
//! h   = write_lstm(c)
//! M  <- M ∘ (1 - 1zᵀ) + h zᵀ     erase-then-write at the slots that were read
//! ```
//!
//! Attention always reads the pre-update memory, and the same key vector
//! both addresses the read and directs the write. Similarity is the plain
//! dot product, with no scaling or temperature. Each auxiliary memory gets
//! its own key from the same `o` and is written with the same `h`.

pub mod trace;

use crate::autodiff::{Graph, Var};
use crate::cells::{Init, Linear, LstmStack, LstmState, MlpComposer};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub use trace::{Trace, TraceRecord};

/// Additive score for masked slots.
const MASKED_SCORE: f64 = -1e9;

/// The encoding memory: slot `j` is column `j` of a `k×l` matrix.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    pub slots: Var,
    pub k: usize,
    pub l: usize,
    /// Additive attention mask (0 for live slots, a large negative value for
    /// masked ones). `None` means every slot participates.
    pub mask: Option<Var>,
}

/// A point on the simplex over memory slots.
#[derive(Clone, Copy, Debug)]
pub struct KeyVector {
    pub weights: Var,
}

impl KeyVector {
    /// A hard address at `slot`.
    pub fn one_hot<T: Real>(g: &mut Graph<'_, T>, l: usize, slot: usize) -> Result<Self> {
        if slot >= l {
            return Err(Error::dim(format!("slot {slot} outside memory of {l} slots")));
        }
        let mut w = vec![T::zero(); l];
        w[slot] = T::one();
        Ok(Self {
            weights: g.constant(Tensor::vector(w)),
        })
    }
}

/// Builds the initial ("baby") memory whose slots are the given vectors.
pub fn init_memory<T: Real>(g: &mut Graph<'_, T>, embeddings: &[Var]) -> Result<Memory> {
    if embeddings.is_empty() {
        return Err(Error::Input("cannot initialize memory from an empty sequence".into()));
    }
    let slots = g.stack_cols(embeddings)?;
    let (k, l) = g.shape(slots).dims();
    Ok(Memory { slots, k, l, mask: None })
}

/// As [`init_memory`], but slots with `live[j] == false` are excluded from attention.
pub fn init_memory_masked<T: Real>(g: &mut Graph<'_, T>, embeddings: &[Var], live: &[bool]) -> Result<Memory> {
    let mut m = init_memory(g, embeddings)?;
    if live.len() != m.l {
        return Err(Error::dim(format!("mask of length {} for {} slots", live.len(), m.l)));
    }
    if !live.iter().any(|&b| b) {
        return Err(Error::Input("attention mask hides every slot".into()));
    }
    let add = live
        .iter()
        .map(|&b| if b { T::zero() } else { T::from_f64c(MASKED_SCORE) })
        .collect();
    m.mask = Some(g.constant(Tensor::vector(add)));
    Ok(m)
}

/// `z = softmax(oᵀ M)`, `m_r = M z`.
pub fn attend<T: Real>(g: &mut Graph<'_, T>, o: Var, mem: &Memory) -> Result<(KeyVector, Var)> {
    if g.shape(o) != Shape::Vector(mem.k) {
        return Err(Error::dim(format!(
            "attention query has shape {}, memory slots have length {}",
            g.shape(o),
            mem.k
        )));
    }
    let mut scores = g.vecmat(o, mem.slots)?;
    if let Some(mask) = mem.mask {
        scores = g.add(scores, mask)?;
    }
    let z = g.softmax(scores)?;
    let read = g.matvec(mem.slots, z)?;
    Ok((KeyVector { weights: z }, read))
}

/// Reads with a caller-supplied key instead of attending.
pub fn read_with<T: Real>(g: &mut Graph<'_, T>, key: &KeyVector, mem: &Memory) -> Result<Var> {
    if g.shape(key.weights) != Shape::Vector(mem.l) {
        return Err(Error::dim(format!("key {} for {} slots", g.shape(key.weights), mem.l)));
    }
    g.matvec(mem.slots, key.weights)
}

/// Erase-then-write: slot `j` moves a fraction `z_j` of the way to `h`.
pub fn update_memory<T: Real>(g: &mut Graph<'_, T>, mem: &Memory, z: &KeyVector, h: Var) -> Result<Memory> {
    let slots = g.memory_write(mem.slots, z.weights, h)?;
    Ok(Memory { slots, ..*mem })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NseConfig {
    /// Memory/hidden width `k`; also the read and write LSTM width.
    pub dim: usize,
    /// Width of the incoming token vectors. When it differs from `dim`, a
    /// linear map projects tokens to `dim` before memory initialization.
    pub input_dim: usize,
    pub read_layers: usize,
    pub write_layers: usize,
    /// Intermediate widths of the composition MLP (empty = single layer).
    pub compose_hidden: Vec<usize>,
    /// Number of auxiliary memories the composition reads from.
    pub aux_memories: usize,
    /// Dropout on the token vectors.
    pub input_dropout: f64,
    /// Dropout on the read and write LSTM outputs.
    pub rw_dropout: f64,
    /// Gain added along the diagonal of the first read cell's candidate
    /// input block, on top of the Glorot draw. A positive gain makes each
    /// read key start out similar to the token it was computed from, so that
    /// attention over the embedding-initialized memory begins as a noisy
    /// token match instead of a random one. Zero keeps the plain draw.
    pub read_alignment: f64,
}

impl NseConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            input_dim: dim,
            read_layers: 1,
            write_layers: 1,
            compose_hidden: Vec::new(),
            aux_memories: 0,
            input_dropout: 0.0,
            rw_dropout: 0.0,
            read_alignment: 0.0,
        }
    }

    pub fn with_aux(mut self, n: usize) -> Self {
        self.aux_memories = n;
        self
    }
}

/// Soft attention or a forced hard address for the encoder's own memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Addressing {
    Soft,
    Forced(usize),
}

/// Everything carried from one step to the next.
#[derive(Clone, Debug)]
pub struct NseState {
    pub memory: Memory,
    pub aux: Vec<Memory>,
    pub read: Vec<LstmState>,
    pub write: Vec<LstmState>,
    pub trace: Option<Trace>,
    pub t: usize,
}

/// Output of [`NseEncoder::encode_sequence`].
#[derive(Clone, Debug)]
pub struct Encoding {
    pub outputs: Vec<Var>,
    pub memory: Memory,
    pub aux: Vec<Memory>,
    pub read: Vec<LstmState>,
    pub write: Vec<LstmState>,
    pub trace: Option<Trace>,
}

impl Encoding {
    pub fn last(&self) -> Var {
        *self.outputs.last().expect("encodings are nonempty")
    }
}

#[derive(Clone, Debug)]
pub struct NseEncoder {
    pub config: NseConfig,
    pub projection: Option<Linear>,
    pub read: LstmStack,
    pub compose: MlpComposer,
    pub write: LstmStack,
}

impl NseEncoder {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: NseConfig) -> Result<Self> {
        let k = config.dim;
        if k == 0 || config.input_dim == 0 {
            return Err(Error::Config(format!("`{name}`: dimensions must be positive")));
        }
        for p in [config.input_dropout, config.rw_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("`{name}`: dropout {p} outside [0, 1)")));
            }
        }
        let projection = if config.input_dim != k {
            Some(Linear::new(init, &format!("{name}.proj"), config.input_dim, k)?)
        } else {
            None
        };
        if !config.read_alignment.is_finite() {
            return Err(Error::Config(format!("`{name}`: read alignment must be finite")));
        }
        let read = LstmStack::new(init, &format!("{name}.read"), k, k, config.read_layers)?;
        if config.read_alignment != 0.0 {
            read.cells[0].add_candidate_identity(init.params_mut(), config.read_alignment)?;
        }
        let arity = 2 + config.aux_memories;
        let compose = MlpComposer::new(init, &format!("{name}.compose"), &vec![k; arity], &config.compose_hidden, k)?;
        let write = LstmStack::new(init, &format!("{name}.write"), k, k, config.write_layers)?;
        Ok(Self {
            config,
            projection,
            read,
            compose,
            write,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Applies input dropout and the optional projection to raw token vectors.
    pub fn prepare_inputs<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[Var]) -> Result<Vec<Var>> {
        tokens
            .iter()
            .map(|&x| {
                if g.shape(x) != Shape::Vector(self.config.input_dim) {
                    return Err(Error::dim(format!(
                        "token vector has shape {}, encoder expects ({},)",
                        g.shape(x),
                        self.config.input_dim
                    )));
                }
                let x = g.dropout(x, self.config.input_dropout)?;
                match &self.projection {
                    Some(p) => p.forward(g, x),
                    None => Ok(x),
                }
            })
            .collect()
    }

    /// A fresh state over `memory` with zero LSTM states.
    pub fn start<T: Real>(&self, g: &mut Graph<'_, T>, memory: Memory, aux: Vec<Memory>, trace: Option<Trace>) -> NseState {
        NseState {
            memory,
            aux,
            read: self.read.zero_state(g),
            write: self.write.zero_state(g),
            trace,
            t: 0,
        }
    }

    /// One read/compose/write step on `x` (already prepared). Dispatches on
    /// whether the state carries auxiliary memories.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, state: &mut NseState, x: Var) -> Result<Var> {
        self.step_with(g, state, x, Addressing::Soft)
    }

    /// Step without auxiliary memories.
    pub fn nse_step<T: Real>(&self, g: &mut Graph<'_, T>, state: &mut NseState, x: Var) -> Result<Var> {
        if !state.aux.is_empty() {
            return Err(Error::Config("nse_step on a state with auxiliary memories".into()));
        }
        self.step(g, state, x)
    }

    /// Step reading from and writing to every auxiliary memory as well.
    pub fn mma_step<T: Real>(&self, g: &mut Graph<'_, T>, state: &mut NseState, x: Var) -> Result<Var> {
        if state.aux.is_empty() {
            return Err(Error::Config("mma_step needs at least one auxiliary memory".into()));
        }
        self.step(g, state, x)
    }

    pub fn step_with<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        state: &mut NseState,
        x: Var,
        addressing: Addressing,
    ) -> Result<Var> {
        if state.aux.len() != self.config.aux_memories {
            return Err(Error::Config(format!(
                "encoder composes {} auxiliary memories, state carries {}",
                self.config.aux_memories,
                state.aux.len()
            )));
        }
        if g.shape(x) != Shape::Vector(self.dim()) {
            return Err(Error::dim(format!("step input {} for encoder width {}", g.shape(x), self.dim())));
        }
        let p = self.config.rw_dropout;

        let o = self.read.step(g, x, &mut state.read).map_err(|e| e.in_stage("read"))?;
        let o = g.dropout(o, p)?;

        let (z, m_r) = match addressing {
            Addressing::Soft => attend(g, o, &state.memory),
            Addressing::Forced(slot) => {
                let z = KeyVector::one_hot(g, state.memory.l, slot)?;
                read_with(g, &z, &state.memory).map(|r| (z, r))
            }
        }
        .map_err(|e| e.in_stage("attend"))?;

        let mut compose_in = vec![o, m_r];
        let mut aux_keys = Vec::with_capacity(state.aux.len());
        for mem in &state.aux {
            let (zn, mn) = attend(g, o, mem).map_err(|e| e.in_stage("attend-aux"))?;
            compose_in.push(mn);
            aux_keys.push(zn);
        }
        let c = self.compose.forward(g, &compose_in).map_err(|e| e.in_stage("compose"))?;

        let h = self.write.step(g, c, &mut state.write).map_err(|e| e.in_stage("write"))?;
        let h = g.dropout(h, p)?;

        state.memory = update_memory(g, &state.memory, &z, h).map_err(|e| e.in_stage("update"))?;
        for (mem, zn) in state.aux.iter_mut().zip(&aux_keys) {
            *mem = update_memory(g, mem, zn, h).map_err(|e| e.in_stage("update-aux"))?;
        }

        if let Some(trace) = state.trace.as_mut() {
            let token = trace
                .tokens
                .as_ref()
                .and_then(|t| t.get(state.t).cloned())
                .unwrap_or_default();
            let zv = g.value(z.weights).to_f64_vec();
            let aux = aux_keys.iter().map(|k| g.value(k.weights).to_f64_vec()).collect();
            trace.records.push(TraceRecord::new(state.t, token, zv, aux));
        }
        state.t += 1;
        Ok(h)
    }

    /// Initializes memory from `tokens` and runs one step per token.
    pub fn encode_sequence<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[Var],
        aux: Vec<Memory>,
        opts: &EncodeOptions,
    ) -> Result<Encoding> {
        if tokens.is_empty() {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        let xs = self.prepare_inputs(g, tokens)?;
        let memory = match &opts.live_slots {
            Some(live) => init_memory_masked(g, &xs, live)?,
            None => init_memory(g, &xs)?,
        };
        let trace = opts.trace.then(|| Trace {
            tokens: opts.labels.clone(),
            records: Vec::with_capacity(xs.len()),
        });
        let mut state = self.start(g, memory, aux, trace);
        let mut outputs = Vec::with_capacity(xs.len());
        for (t, &x) in xs.iter().enumerate() {
            let addressing = match &opts.forced_slots {
                Some(slots) => Addressing::Forced(*slots.get(t).ok_or_else(|| {
                    Error::Input(format!("forced address list has {} entries for {} tokens", slots.len(), xs.len()))
                })?),
                None => Addressing::Soft,
            };
            outputs.push(self.step_with(g, &mut state, x, addressing)?);
        }
        Ok(Encoding {
            outputs,
            memory: state.memory,
            aux: state.aux,
            read: state.read,
            write: state.write,
            trace: state.trace,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct EncodeOptions {
    pub trace: bool,
    /// Token strings recorded in the trace (and used as slot lineage).
    pub labels: Option<Vec<String>>,
    /// Attention mask over slots; `false` excludes a (padding) slot.
    pub live_slots: Option<Vec<bool>>,
    /// Hard addresses per step, replacing soft attention on the own memory.
    pub forced_slots: Option<Vec<usize>>,
}

impl EncodeOptions {
    pub fn traced(labels: Option<Vec<String>>) -> Self {
        Self {
            trace: true,
            labels,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;

    fn vecs(g: &mut Graph<f64>, xs: &[&[f64]]) -> Vec<Var> {
        xs.iter().map(|x| g.leaf(Tensor::vector(x.to_vec()))).collect()
    }

    #[test]
    fn init_memory_columns_in_order() {
        let mut g = Graph::new();
        let e = vecs(&mut g, &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let m = init_memory(&mut g, &e).unwrap();
        assert_eq!((m.k, m.l), (2, 3));
        for j in 0..3 {
            assert_eq!(g.value(m.slots).column(j), g.value(e[j]).data());
        }
        let one = init_memory(&mut g, &e[..1]).unwrap();
        assert_eq!(g.value(one.slots).data(), &[1.0, 2.0]);
    }

    #[test]
    fn init_memory_errors() {
        let mut g = Graph::<f64>::new();
        assert!(matches!(init_memory(&mut g, &[]), Err(Error::Input(_))));
        let e = vecs(&mut g, &[&[1.0, 2.0], &[3.0]]);
        assert!(matches!(init_memory(&mut g, &e), Err(Error::Dimension(_))));
    }

    #[test]
    fn attend_identical_slots() {
        let mut g = Graph::new();
        let u = [0.3, -1.0, 2.0];
        let e = vecs(&mut g, &[&u, &u]);
        let m = init_memory(&mut g, &e).unwrap();
        let o = g.leaf(Tensor::vector(vec![1.0, 0.5, -0.2]));
        let (z, r) = attend(&mut g, o, &m).unwrap();
        assert_eq!(g.value(z.weights).data(), &[0.5, 0.5]);
        for (a, b) in g.value(r).data().iter().zip(u) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn attend_saturates() {
        let mut g = Graph::new();
        let o = [0.6, -0.8];
        let alpha = 40.0;
        let e = vecs(&mut g, &[&[alpha * o[0], alpha * o[1]], &[-alpha * o[0], -alpha * o[1]]]);
        let m = init_memory(&mut g, &e).unwrap();
        let ov = g.leaf(Tensor::vector(o.to_vec()));
        let (z, r) = attend(&mut g, ov, &m).unwrap();
        assert!(g.value(z.weights).data()[0] > 1.0 - 1e-12);
        assert!((g.value(r).data()[0] - alpha * o[0]).abs() < 1e-9);
    }

    #[test]
    fn attend_rejects_k_mismatch() {
        let mut g = Graph::new();
        let e = vecs(&mut g, &[&[1.0, 2.0]]);
        let m = init_memory(&mut g, &e).unwrap();
        let o = g.leaf(Tensor::vector(vec![1.0; 3]));
        assert!(matches!(attend(&mut g, o, &m), Err(Error::Dimension(_))));
    }

    #[test]
    fn masked_slots_get_no_weight() {
        let mut g = Graph::new();
        let e = vecs(&mut g, &[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let m = init_memory_masked(&mut g, &e, &[true, false, true]).unwrap();
        let o = g.leaf(Tensor::vector(vec![0.0, 5.0]));
        let (z, _) = attend(&mut g, o, &m).unwrap();
        let zv = g.value(z.weights).data();
        assert_eq!(zv[1], 0.0);
        assert!((zv[0] + zv[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn update_with_one_hot_and_uniform_keys() {
        let mut g = Graph::new();
        let e = vecs(&mut g, &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
        let m = init_memory(&mut g, &e).unwrap();
        let h = g.leaf(Tensor::vector(vec![-1.0, 9.0]));
        let z = KeyVector::one_hot(&mut g, 4, 2).unwrap();
        let m2 = update_memory(&mut g, &m, &z, h).unwrap();
        let (old, new) = (g.value(m.slots).clone(), g.value(m2.slots).clone());
        for j in 0..4 {
            if j == 2 {
                assert_eq!(new.column(j), vec![-1.0, 9.0]);
            } else {
                assert_eq!(new.column(j), old.column(j));
            }
        }

        let z = g.leaf(Tensor::vector(vec![0.25; 4]));
        let m3 = update_memory(&mut g, &m, &KeyVector { weights: z }, h).unwrap();
        let new = g.value(m3.slots).clone();
        for j in 0..4 {
            for r in 0..2 {
                let want = old.at(r, j) + 0.25 * (g.value(h).data()[r] - old.at(r, j));
                assert!((new.at(r, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn update_rejects_length_mismatch() {
        let mut g = Graph::new();
        let e = vecs(&mut g, &[&[1.0, 2.0], &[3.0, 4.0]]);
        let m = init_memory(&mut g, &e).unwrap();
        let h = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let z = KeyVector::one_hot(&mut g, 2, 0).unwrap();
        assert!(matches!(update_memory(&mut g, &m, &z, h), Err(Error::Dimension(_))));
    }

    fn encoder(seed: u64, cfg: NseConfig) -> (ParameterSet<f64>, NseEncoder) {
        let mut p = ParameterSet::new();
        let enc = NseEncoder::new(&mut Init::new(&mut p, seed), "nse", cfg).unwrap();
        (p, enc)
    }

    #[test]
    fn single_slot_memory_is_overwritten() {
        let (p, enc) = encoder(1, NseConfig::new(4));
        let mut g = Graph::with_params(&p);
        let x = g.leaf(Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]));
        let out = enc
            .encode_sequence(&mut g, &[x], vec![], &EncodeOptions::traced(None))
            .unwrap();
        assert_eq!(out.outputs.len(), 1);
        assert_eq!(out.trace.as_ref().unwrap().records[0].z, vec![1.0]);
        assert_eq!(g.value(out.memory.slots).data(), g.value(out.last()).data());
    }

    #[test]
    fn step_requires_matching_aux_count() {
        let (p, enc) = encoder(2, NseConfig::new(3).with_aux(1));
        let mut g = Graph::with_params(&p);
        let x = g.leaf(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let m = init_memory(&mut g, &[x]).unwrap();
        let mut s = enc.start(&mut g, m, vec![], None);
        assert!(matches!(enc.step(&mut g, &mut s, x), Err(Error::Config(_))));
        assert!(matches!(enc.mma_step(&mut g, &mut s, x), Err(Error::Config(_))));
    }

    #[test]
    fn aux_single_slot_overwritten_with_h() {
        let (p, enc) = encoder(3, NseConfig::new(3).with_aux(1));
        let mut g = Graph::with_params(&p);
        let a = g.leaf(Tensor::vector(vec![0.5, -0.5, 0.2]));
        let aux = init_memory(&mut g, &[a]).unwrap();
        let xs = vecs(&mut g, &[&[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]]);
        let m = init_memory(&mut g, &xs).unwrap();
        let mut s = enc.start(&mut g, m, vec![aux], None);
        let h = enc.mma_step(&mut g, &mut s, xs[0]).unwrap();
        assert_eq!(g.value(s.aux[0].slots).data(), g.value(h).data());
    }

    #[test]
    fn numeric_errors_name_the_stage() {
        let (mut p, enc) = encoder(4, NseConfig::new(2));
        let w = enc.compose.layers[0].w;
        p.set(w, Tensor::full(Shape::Matrix(2, 4), f64::MAX)).unwrap();
        let mut g = Graph::with_params(&p);
        let x = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let err = enc
            .encode_sequence(&mut g, &[x, x], vec![], &EncodeOptions::default())
            .unwrap_err();
        match err {
            Error::Numeric { stage, .. } => assert!(stage.starts_with("compose"), "{stage}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn forced_addressing_writes_the_named_slot() {
        let (p, enc) = encoder(5, NseConfig::new(2));
        let mut g = Graph::with_params(&p);
        let xs = vecs(&mut g, &[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]);
        let opts = EncodeOptions {
            forced_slots: Some(vec![2, 0, 2]),
            ..EncodeOptions::traced(None)
        };
        let out = enc.encode_sequence(&mut g, &xs, vec![], &opts).unwrap();
        let argmaxes: Vec<usize> = out.trace.unwrap().records.iter().map(|r| r.argmax).collect();
        assert_eq!(argmaxes, vec![2, 0, 2]);
        assert_eq!(g.value(out.memory.slots).column(1), vec![0.3, 0.4]);
    }
}
