//! Recurrent and feed-forward building blocks: affine layers, LSTM cells and
//! stacks, the arity-configurable composition MLP, and parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParameterSet};
use crate::tensor::{Real, Shape, Tensor};

/// Registers freshly initialized tensors in a [`ParameterSet`].
///
/// Weights are Glorot-uniform, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`;
/// biases start at zero. All draws come from one seeded stream, so the same
/// construction sequence and seed always yields the same values.
pub struct Init<'a, T> {
    params: &'a mut ParameterSet<T>,
    rng: ChaCha8Rng,
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<'a, T: Real> Init<'a, T> {
    pub fn new(params: &'a mut ParameterSet<T>, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn params(&self) -> &ParameterSet<T> {
        self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        self.params
    }

    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        positive(name, &[rows, cols])?;
        let s = glorot_bound(cols, rows);
        let data = (0..rows * cols)
            .map(|_| T::from_f64c(self.rng.gen_range(-s..s)))
            .collect();
        self.params.add(name, ParamKind::Weight, Tensor::matrix(rows, cols, data)?)
    }

    pub fn zeros(&mut self, name: &str, n: usize) -> Result<ParamId> {
        positive(name, &[n])?;
        self.params.add(name, ParamKind::Bias, Tensor::zeros(Shape::Vector(n)))
    }

    pub fn bias(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        positive(name, &[value.len()])?;
        self.params.add(name, ParamKind::Bias, value)
    }

    /// A `rows×cols` lookup table drawn from `U(-scale, scale)`.
    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize, scale: f64) -> Result<ParamId> {
        positive(name, &[rows, cols])?;
        let data = (0..rows * cols)
            .map(|_| T::from_f64c(self.rng.gen_range(-scale..scale)))
            .collect();
        self.params.add(name, ParamKind::Embedding, Tensor::matrix(rows, cols, data)?)
    }
}

fn positive(name: &str, sizes: &[usize]) -> Result<()> {
    if sizes.contains(&0) {
        return Err(Error::Config(format!("`{name}` has a zero dimension: {sizes:?}")));
    }
    Ok(())
}

/// `y = W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: init.glorot(&format!("{name}.w"), output, input)?,
            b: init.zeros(&format!("{name}.b"), output)?,
            input,
            output,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let y = g.matvec(w, x)?;
        g.add(y, b)
    }
}

/// Hidden and cell state of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Real>(g: &mut Graph<'_, T>, hidden: usize) -> Self {
        let z = Tensor::zeros(Shape::Vector(hidden));
        Self {
            h: g.constant(z.clone()),
            c: g.constant(z),
        }
    }
}

/// A standard (non-peephole) LSTM cell. One fused weight matrix maps
/// `[x; h]` to the stacked gate pre-activations in the order
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        positive(name, &[input, hidden])?;
        let w = init.glorot(&format!("{name}.w"), 4 * hidden, input + hidden)?;
        let mut bias = vec![T::zero(); 4 * hidden];
        for v in &mut bias[hidden..2 * hidden] {
            *v = T::from_f64c(Self::FORGET_BIAS);
        }
        let b = init.bias(&format!("{name}.b"), Tensor::vector(bias))?;
        Ok(Self { w, b, input, hidden })
    }

    /// Adds `gain` along the diagonal of the candidate block's input columns,
    /// so that the candidate starts out tracking the input coordinate-wise.
    /// Needs `input == hidden`.
    pub fn add_candidate_identity<T: Real>(&self, params: &mut ParameterSet<T>, gain: f64) -> Result<()> {
        let n = self.hidden;
        if self.input != n {
            return Err(Error::Config(format!(
                "candidate identity needs equal input and hidden widths, got {} and {n}",
                self.input
            )));
        }
        let cols = self.input + n;
        let gain = T::from_f64c(gain);
        let w = params.get_mut(self.w).data_mut();
        for r in 0..n {
            w[(2 * n + r) * cols + r] += gain;
        }
        Ok(())
    }

    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, state: LstmState) -> Result<LstmState> {
        let n = self.hidden;
        if g.shape(x) != Shape::Vector(self.input) {
            return Err(Error::dim(format!(
                "lstm input has shape {}, cell expects ({},)",
                g.shape(x),
                self.input
            )));
        }
        if g.shape(state.h) != Shape::Vector(n) || g.shape(state.c) != Shape::Vector(n) {
            return Err(Error::dim(format!("lstm state must have length {n}")));
        }
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let xh = g.concat(&[x, state.h])?;
        let pre = g.matvec(w, xh)?;
        let pre = g.add(pre, b)?;
        let i = g.slice(pre, 0, n)?;
        let f = g.slice(pre, n, n)?;
        let cand = g.slice(pre, 2 * n, n)?;
        let o = g.slice(pre, 3 * n, n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let add = g.mul(i, cand)?;
        let c = g.add(keep, add)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Layers of LSTM cells; each layer's hidden state feeds the next layer.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub cells: Vec<LstmCell>,
}

impl LstmStack {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config(format!("`{name}` needs at least one layer")));
        }
        let cells = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                LstmCell::new(init, &format!("{name}.l{l}"), inp, hidden)
            })
            .collect::<Result<_>>()?;
        Ok(Self { cells })
    }

    pub fn hidden(&self) -> usize {
        self.cells.last().map_or(0, |c| c.hidden)
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<'_, T>) -> Vec<LstmState> {
        self.cells.iter().map(|c| LstmState::zeros(g, c.hidden)).collect()
    }

    /// Advances every layer by one step; returns the top layer's output.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, state: &mut [LstmState]) -> Result<Var> {
        let mut inp = x;
        for (cell, s) in self.cells.iter().zip(state.iter_mut()) {
            *s = cell.step(g, inp, *s)?;
            inp = s.h;
        }
        Ok(inp)
    }
}

/// The composition network: `relu(W · [x₁; …; xₙ] + b)`, optionally with
/// further ReLU layers.
#[derive(Clone, Debug)]
pub struct MlpComposer {
    pub inputs: Vec<usize>,
    pub layers: Vec<Linear>,
}

impl MlpComposer {
    /// `hidden` lists the widths of any intermediate layers; empty means a
    /// single affine layer straight to `output`.
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        inputs: &[usize],
        hidden: &[usize],
        output: usize,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config(format!("`{name}` needs at least one input")));
        }
        let mut widths = vec![inputs.iter().sum()];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &format!("{name}.l{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs: inputs.to_vec(),
            layers,
        })
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.arity() {
            return Err(Error::Config(format!(
                "composer expects {} inputs, got {}",
                self.arity(),
                inputs.len()
            )));
        }
        for (i, (&x, &n)) in inputs.iter().zip(&self.inputs).enumerate() {
            if g.shape(x) != Shape::Vector(n) {
                return Err(Error::dim(format!("composer input {i} has shape {}, expected ({n},)", g.shape(x))));
            }
        }
        let mut y = g.concat(inputs)?;
        for layer in &self.layers {
            let a = layer.forward(g, y)?;
            y = g.relu(a)?;
        }
        Ok(y)
    }
}

/// Layer-size description for [`init_params`].
#[derive(Clone, Debug)]
pub enum LayerSpec {
    Linear { name: String, input: usize, output: usize },
    Lstm { name: String, input: usize, hidden: usize },
}

/// Builds a parameter set from a flat layer list, deterministically per seed.
pub fn init_params<T: Real>(layers: &[LayerSpec], seed: u64) -> Result<ParameterSet<T>> {
    let mut params = ParameterSet::new();
    let mut init = Init::new(&mut params, seed);
    for l in layers {
        match l {
            LayerSpec::Linear { name, input, output } => {
                Linear::new(&mut init, name, *input, *output)?;
            }
            LayerSpec::Lstm { name, input, hidden } => {
                LstmCell::new(&mut init, name, *input, *hidden)?;
            }
        }
    }
    Ok(params)
}
