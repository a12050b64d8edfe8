//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. [`Graph::backward`]
//! walks the tape in exact reverse recording order and accumulates vector-
//! Jacobian products into per-node gradient buffers. Gradients accumulate
//! additively when a node is used more than once.
//!
//! Parameters enter the tape through [`Graph::param`], which borrows the value
//! from the bound [`ParameterSet`] (one node per parameter per tape), so the
//! collected [`Gradients`] line up with parameter ids.
//!
//! ```
//! use nse_core::autodiff::Graph;
//! use nse_core::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.leaf(Tensor::scalar(4.0));
//! let z = g.mul(x, y).unwrap();
//! let grads = g.backward(z).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item(), 4.0);
//! assert_eq!(grads.wrt(y).unwrap().item(), 3.0);
//! ```

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParameterSet};
use crate::tensor::{axpy, dot, matmul_into, Real, Shape, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on one particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(usize, usize),
    MatVec(usize, usize),
    VecMat(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Abs(usize),
    Softmax(usize),
    Outer(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    StackCols(Vec<usize>),
    GatherRow(usize, usize),
    AddRowBroadcast(usize, usize),
    AddColBroadcast(usize, usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    SumSquares(usize),
    Dropout(usize, Vec<T>),
    MemoryWrite(usize, usize, usize),
    SoftmaxXent(usize, usize, Vec<T>),
    SigmoidXent(usize, T),
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
}

impl<T> Node<'_, T> {
    fn value(&self) -> &Tensor<T> {
        match &self.value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

/// A recording tape. Single-threaded; build one per example.
pub struct Graph<'p, T> {
    id: u32,
    nodes: Vec<Node<'p, T>>,
    params: Option<&'p ParameterSet<T>>,
    param_nodes: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// A tape without bound parameters, in evaluation mode.
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: None,
            param_nodes: HashMap::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_params(params: &'p ParameterSet<T>) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Enables dropout, drawing masks from a stream seeded by `seed`.
    pub fn training(mut self, seed: u64) -> Self {
        self.train = true;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> Option<&'p ParameterSet<T>> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.index()].value()
    }

    /// Smallest `|x|` over the inputs of every `relu` and `abs` node, or
    /// `None` if the tape has neither. Finite differences with a step larger
    /// than this may straddle a kink.
    pub fn kink_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::Abs(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a].value().data().iter().map(|x| x.abs()))
            .reduce(T::min)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "variable {} of tape {} used on tape {}",
                v.idx, v.tape, self.id
            )));
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(name, format!("non-finite output of shape {}", value.shape())));
        }
        Ok(self.push_unchecked(Value::Owned(value), op))
    }

    fn push_unchecked(&mut self, value: Value<'p, T>, op: Op<T>) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        Var { tape: self.id, idx }
    }

    fn vec_len(&self, i: usize, op: &str) -> Result<usize> {
        match self.nodes[i].value().shape() {
            Shape::Vector(n) => Ok(n),
            s => Err(Error::dim(format!("{op} expects a 1-D operand, got {s}"))),
        }
    }

    fn mat_dims(&self, i: usize, op: &str) -> Result<(usize, usize)> {
        match self.nodes[i].value().shape() {
            Shape::Matrix(r, c) => Ok((r, c)),
            s => Err(Error::dim(format!("{op} expects a 2-D operand, got {s}"))),
        }
    }

    /// Records an input tensor. Its gradient is available from [`GradStore::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push_unchecked(Value::Owned(t), Op::Leaf)
    }

    /// Alias of [`leaf`](Self::leaf) for values whose gradient is not needed.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t)
    }

    /// The node for a bound parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let params = self
            .params
            .ok_or_else(|| Error::Tape("graph has no bound parameter set".into()))?;
        if id.index() >= params.len() {
            return Err(Error::Tape(format!("parameter id {} out of range", id.index())));
        }
        let v = self.push_unchecked(Value::Borrowed(params.get(id)), Op::Param);
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value().matmul(self.nodes[ib].value())?;
        self.push(out, Op::MatMul(ia, ib), "matmul")
    }

    /// `W · x` for `W: m×n`, `x: n`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (iw, ix) = (self.check(w)?, self.check(x)?);
        let (m, n) = self.mat_dims(iw, "matvec")?;
        let nx = self.vec_len(ix, "matvec")?;
        if n != nx {
            return Err(Error::dim(format!("matvec: ({m}, {n}) x ({nx},)")));
        }
        let wv = self.nodes[iw].value().data();
        let xv = self.nodes[ix].value().data();
        let out: Vec<T> = (0..m).map(|r| dot(&wv[r * n..(r + 1) * n], xv)).collect();
        self.push(Tensor::vector(out), Op::MatVec(iw, ix), "matvec")
    }

    /// `xᵀ · W` for `x: m`, `W: m×n`, giving a length-`n` vector.
    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (m, n) = self.mat_dims(iw, "vecmat")?;
        let mx = self.vec_len(ix, "vecmat")?;
        if m != mx {
            return Err(Error::dim(format!("vecmat: ({mx},) x ({m}, {n})")));
        }
        let wv = self.nodes[iw].value().data();
        let xv = self.nodes[ix].value().data();
        let mut out = vec![T::zero(); n];
        for (r, &xr) in xv.iter().enumerate() {
            axpy(xr, &wv[r * n..(r + 1) * n], &mut out);
        }
        self.push(Tensor::vector(out), Op::VecMat(ix, iw), "vecmat")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Tensor<T>)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.nodes[ia].value(), self.nodes[ib].value());
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("{name}: {} vs {}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, t) = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(ia, ib), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, t) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(ia, ib), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, t) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(ia, ib), "mul")
    }

    /// Sums a nonempty list of same-shaped nodes left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::dim("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.map(ia, |x| x * c);
        self.push(t, Op::Scale(ia, c), "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    fn map(&self, i: usize, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.nodes[i].value();
        Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.map(ia, T::tanh);
        self.push(t, Op::Tanh(ia), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.map(ia, sigmoid);
        self.push(t, Op::Sigmoid(ia), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.map(ia, |x| if x > T::zero() { x } else { T::zero() });
        self.push(t, Op::Relu(ia), "relu")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.map(ia, T::abs);
        self.push(t, Op::Abs(ia), "abs")
    }

    /// Softmax of a 1-D tensor, computed after subtracting the maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.vec_len(ia, "softmax")?;
        let x = self.nodes[ia].value();
        if x.is_empty() {
            return Err(Error::dim("softmax of an empty vector"));
        }
        let p = softmax_values(x.data());
        self.push(Tensor::vector(p), Op::Softmax(ia), "softmax")
    }

    /// `u ⊗ v`, an `m×n` matrix.
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let (iu, iv) = (self.check(u)?, self.check(v)?);
        let m = self.vec_len(iu, "outer")?;
        let n = self.vec_len(iv, "outer")?;
        let uv = self.nodes[iu].value().data();
        let vv = self.nodes[iv].value().data();
        let mut out = Vec::with_capacity(m * n);
        for &a in uv {
            out.extend(vv.iter().map(|&b| a * b));
        }
        self.push(Tensor::matrix(m, n, out)?, Op::Outer(iu, iv), "outer")
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::dim("concat of an empty list"));
        }
        let mut idx = Vec::with_capacity(xs.len());
        let mut out = Vec::new();
        for &x in xs {
            let i = self.check(x)?;
            self.vec_len(i, "concat")?;
            out.extend_from_slice(self.nodes[i].value().data());
            idx.push(i);
        }
        self.push(Tensor::vector(out), Op::Concat(idx), "concat")
    }

    /// Elements `start..start + len` of a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let n = self.vec_len(ia, "slice")?;
        if start + len > n || len == 0 {
            return Err(Error::dim(format!("slice {start}..{} of length-{n} vector", start + len)));
        }
        let out = self.nodes[ia].value().data()[start..start + len].to_vec();
        self.push(Tensor::vector(out), Op::Slice(ia, start), "slice")
    }

    /// Places equal-length vectors side by side as the columns of a matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var> {
        if cols.is_empty() {
            return Err(Error::dim("stack_cols of an empty list"));
        }
        let mut idx = Vec::with_capacity(cols.len());
        for &c in cols {
            let i = self.check(c)?;
            self.vec_len(i, "stack_cols")?;
            idx.push(i);
        }
        let k = self.nodes[idx[0]].value().len();
        if let Some(&bad) = idx.iter().find(|&&i| self.nodes[i].value().len() != k) {
            return Err(Error::dim(format!(
                "stack_cols: column of length {} among columns of length {k}",
                self.nodes[bad].value().len()
            )));
        }
        let l = idx.len();
        let mut out = vec![T::zero(); k * l];
        for (j, &i) in idx.iter().enumerate() {
            for (r, &v) in self.nodes[i].value().data().iter().enumerate() {
                out[r * l + j] = v;
            }
        }
        self.push(Tensor::matrix(k, l, out)?, Op::StackCols(idx), "stack_cols")
    }

    /// Row `r` of a matrix as a vector (embedding lookup).
    pub fn gather_row(&mut self, table: Var, r: usize) -> Result<Var> {
        let it = self.check(table)?;
        let (rows, _) = self.mat_dims(it, "gather_row")?;
        if r >= rows {
            return Err(Error::dim(format!("gather_row: row {r} of {rows}")));
        }
        let out = self.nodes[it].value().row(r).to_vec();
        self.push(Tensor::vector(out), Op::GatherRow(it, r), "gather_row")
    }

    /// Adds `v` (length = cols) to every row of `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv) = (self.check(m)?, self.check(v)?);
        let (r, c) = self.mat_dims(im, "add_row_broadcast")?;
        if self.vec_len(iv, "add_row_broadcast")? != c {
            return Err(Error::dim(format!("add_row_broadcast: ({r}, {c}) + {}", self.nodes[iv].value().shape())));
        }
        let vv = self.nodes[iv].value().data();
        let mut out = self.nodes[im].value().data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &x) in row.iter_mut().zip(vv) {
                *o += x;
            }
        }
        self.push(Tensor::matrix(r, c, out)?, Op::AddRowBroadcast(im, iv), "add_row_broadcast")
    }

    /// Adds `v` (length = rows) to every column of `m`.
    pub fn add_col_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv) = (self.check(m)?, self.check(v)?);
        let (r, c) = self.mat_dims(im, "add_col_broadcast")?;
        if self.vec_len(iv, "add_col_broadcast")? != r {
            return Err(Error::dim(format!("add_col_broadcast: ({r}, {c}) + {}", self.nodes[iv].value().shape())));
        }
        let vv = self.nodes[iv].value().data();
        let mut out = self.nodes[im].value().data().to_vec();
        for (row, &x) in out.chunks_mut(c).zip(vv) {
            for o in row {
                *o += x;
            }
        }
        self.push(Tensor::matrix(r, c, out)?, Op::AddColBroadcast(im, iv), "add_col_broadcast")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s: T = self.nodes[ia].value().data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.nodes[ia].value();
        if t.is_empty() {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let s: T = t.data().iter().copied().sum();
        let n = T::from_usize(t.len()).expect("length fits");
        self.push(Tensor::scalar(s / n), Op::Mean(ia), "mean")
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.nodes[ia].value(), self.nodes[ib].value());
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("dot: {} vs {}", ta.shape(), tb.shape())));
        }
        let s = dot(ta.data(), tb.data());
        self.push(Tensor::scalar(s), Op::Dot(ia, ib), "dot")
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value().norm_sq();
        self.push(Tensor::scalar(s), Op::SumSquares(ia), "sum_squares")
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales the
    /// survivors by `1/(1-p)`. Identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        let ia = self.check(a)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64c(1.0 / (1.0 - p));
        let n = self.nodes[ia].value().len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(ia, mask)
    }

    /// Dropout with an explicit, already-scaled mask.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let ia = self.check(a)?;
        if mask.len() != self.nodes[ia].value().len() {
            return Err(Error::dim("dropout mask length differs from operand"));
        }
        self.dropout_with_mask(ia, mask)
    }

    fn dropout_with_mask(&mut self, ia: usize, mask: Vec<T>) -> Result<Var> {
        let x = self.nodes[ia].value();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(x.shape(), data)?;
        self.push(t, Op::Dropout(ia, mask), "dropout")
    }

    /// Erase-then-write memory update. With `mem: k×l`, `z: l` and `h: k`,
    /// slot (column) `j` becomes `(1 - z_j)·mem[:, j] + z_j·h`.
    pub fn memory_write(&mut self, mem: Var, z: Var, h: Var) -> Result<Var> {
        let (im, iz, ih) = (self.check(mem)?, self.check(z)?, self.check(h)?);
        let (k, l) = self.mat_dims(im, "memory_write")?;
        let nz = self.vec_len(iz, "memory_write")?;
        let nh = self.vec_len(ih, "memory_write")?;
        if nz != l || nh != k {
            return Err(Error::dim(format!(
                "memory_write: memory ({k}, {l}) with key ({nz},) and content ({nh},)"
            )));
        }
        let m = self.nodes[im].value().data();
        let zv = self.nodes[iz].value().data();
        let hv = self.nodes[ih].value().data();
        let mut out = Vec::with_capacity(k * l);
        for (r, &hr) in hv.iter().enumerate() {
            for (j, &zj) in zv.iter().enumerate() {
                out.push((T::one() - zj) * m[r * l + j] + zj * hr);
            }
        }
        self.push(Tensor::matrix(k, l, out)?, Op::MemoryWrite(im, iz, ih), "memory_write")
    }

    /// Cross entropy `-log softmax(logits)[gold]` as a scalar.
    pub fn softmax_xent(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let il = self.check(logits)?;
        let n = self.vec_len(il, "softmax_xent")?;
        if gold >= n {
            return Err(Error::Input(format!("gold class {gold} out of range for {n} classes")));
        }
        let x = self.nodes[il].value().data();
        let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + x.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        let loss = lse - x[gold];
        let p = softmax_values(x);
        self.push(Tensor::scalar(loss), Op::SoftmaxXent(il, gold, p), "softmax_xent")
    }

    /// Binary cross entropy of `sigmoid(logit)` against `label ∈ {0, 1}`,
    /// evaluated in the overflow-free form.
    pub fn sigmoid_xent(&mut self, logit: Var, label: bool) -> Result<Var> {
        let il = self.check(logit)?;
        if !self.nodes[il].value().shape().is_scalar() {
            return Err(Error::dim(format!("sigmoid_xent expects a scalar logit, got {}", self.shape(logit))));
        }
        let x = self.nodes[il].value().item();
        let y = if label { T::one() } else { T::zero() };
        let loss = x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln();
        self.push(Tensor::scalar(loss), Op::SigmoidXent(il, y), "sigmoid_xent")
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<GradStore<T>> {
        if root.tape != self.id {
            return Err(Error::Tape(format!(
                "root belongs to tape {}, not tape {}",
                root.tape, self.id
            )));
        }
        let ir = self.check(root)?;
        if !self.nodes[ir].value().shape().is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {}",
                self.nodes[ir].value().shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=ir).map(|_| None).collect();
        grads[ir] = Some(vec![T::one()]);
        for i in (0..=ir).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(GradStore {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value().shape()).collect(),
            params: self.param_nodes.iter().map(|(&p, &v)| (p, v.index())).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |j: usize| self.nodes[j].value().data();
        let out = val(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a].value().shape().dims();
                let n = self.nodes[b].value().cols();
                // da += g · bᵀ
                let da = acc(grads, a, m * k);
                let bv = val(b);
                for r in 0..m {
                    for p in 0..k {
                        da[r * k + p] += dot(&g[r * n..(r + 1) * n], &bv[p * n..(p + 1) * n]);
                    }
                }
                // db += aᵀ · g
                let av = val(a);
                let mut at = vec![T::zero(); k * m];
                for r in 0..m {
                    for p in 0..k {
                        at[p * m + r] = av[r * k + p];
                    }
                }
                let db = acc(grads, b, k * n);
                matmul_into(&at, g, db, k, m, n);
            }
            &Op::MatVec(w, x) => {
                let (m, n) = self.nodes[w].value().shape().dims();
                let xv = val(x);
                let dw = acc(grads, w, m * n);
                for (r, &gr) in g.iter().enumerate() {
                    axpy(gr, xv, &mut dw[r * n..(r + 1) * n]);
                }
                let wv = val(w);
                let dx = acc(grads, x, n);
                for (r, &gr) in g.iter().enumerate() {
                    axpy(gr, &wv[r * n..(r + 1) * n], dx);
                }
            }
            &Op::VecMat(x, w) => {
                let (m, n) = self.nodes[w].value().shape().dims();
                let wv = val(w);
                let dx = acc(grads, x, m);
                for (r, d) in dx.iter_mut().enumerate() {
                    *d += dot(&wv[r * n..(r + 1) * n], g);
                }
                let xv = val(x);
                let dw = acc(grads, w, m * n);
                for (r, &xr) in xv.iter().enumerate() {
                    axpy(xr, g, &mut dw[r * n..(r + 1) * n]);
                }
            }
            &Op::Add(a, b) => {
                add_into(acc(grads, a, g.len()), g);
                add_into(acc(grads, b, g.len()), g);
            }
            &Op::Sub(a, b) => {
                add_into(acc(grads, a, g.len()), g);
                axpy(-T::one(), g, acc(grads, b, g.len()));
            }
            &Op::Mul(a, b) => {
                let bv = val(b);
                for ((d, &gv), &y) in acc(grads, a, g.len()).iter_mut().zip(g).zip(bv) {
                    *d += gv * y;
                }
                let av = val(a);
                for ((d, &gv), &x) in acc(grads, b, g.len()).iter_mut().zip(g).zip(av) {
                    *d += gv * x;
                }
            }
            &Op::Scale(a, c) => axpy(c, g, acc(grads, a, g.len())),
            &Op::Tanh(a) => {
                for ((d, &gv), &y) in acc(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gv * (T::one() - y * y);
                }
            }
            &Op::Sigmoid(a) => {
                for ((d, &gv), &y) in acc(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gv * y * (T::one() - y);
                }
            }
            &Op::Relu(a) => {
                let xv = val(a);
                for ((d, &gv), &x) in acc(grads, a, g.len()).iter_mut().zip(g).zip(xv) {
                    if x > T::zero() {
                        *d += gv;
                    }
                }
            }
            &Op::Abs(a) => {
                let xv = val(a);
                for ((d, &gv), &x) in acc(grads, a, g.len()).iter_mut().zip(g).zip(xv) {
                    if x > T::zero() {
                        *d += gv;
                    } else if x < T::zero() {
                        *d -= gv;
                    }
                }
            }
            &Op::Softmax(a) => {
                let gy = dot(g, out);
                for ((d, &gv), &y) in acc(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += y * (gv - gy);
                }
            }
            &Op::Outer(u, v) => {
                let (m, n) = (self.nodes[u].value().len(), self.nodes[v].value().len());
                let vv = val(v);
                let du = acc(grads, u, m);
                for (r, d) in du.iter_mut().enumerate() {
                    *d += dot(&g[r * n..(r + 1) * n], vv);
                }
                let uv = val(u);
                let dv = acc(grads, v, n);
                for (r, &ur) in uv.iter().enumerate() {
                    axpy(ur, &g[r * n..(r + 1) * n], dv);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p].value().len();
                    add_into(acc(grads, p, n), &g[off..off + n]);
                    off += n;
                }
            }
            &Op::Slice(a, start) => {
                let n = self.nodes[a].value().len();
                add_into(&mut acc(grads, a, n)[start..start + g.len()], g);
            }
            Op::StackCols(cols) => {
                let l = cols.len();
                for (j, &c) in cols.iter().enumerate() {
                    let k = self.nodes[c].value().len();
                    for (r, d) in acc(grads, c, k).iter_mut().enumerate() {
                        *d += g[r * l + j];
                    }
                }
            }
            &Op::GatherRow(t, r) => {
                let (rows, cols) = self.nodes[t].value().shape().dims();
                add_into(&mut acc(grads, t, rows * cols)[r * cols..(r + 1) * cols], g);
            }
            &Op::AddRowBroadcast(m, v) => {
                add_into(acc(grads, m, g.len()), g);
                let c = self.nodes[v].value().len();
                let dv = acc(grads, v, c);
                for row in g.chunks(c) {
                    add_into(dv, row);
                }
            }
            &Op::AddColBroadcast(m, v) => {
                add_into(acc(grads, m, g.len()), g);
                let r = self.nodes[v].value().len();
                let c = g.len() / r;
                for (d, row) in acc(grads, v, r).iter_mut().zip(g.chunks(c)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
            &Op::Sum(a) => {
                let n = self.nodes[a].value().len();
                for d in acc(grads, a, n) {
                    *d += g[0];
                }
            }
            &Op::Mean(a) => {
                let n = self.nodes[a].value().len();
                let s = g[0] / T::from_usize(n).expect("length fits");
                for d in acc(grads, a, n) {
                    *d += s;
                }
            }
            &Op::Dot(a, b) => {
                let n = self.nodes[a].value().len();
                axpy(g[0], val(b), acc(grads, a, n));
                axpy(g[0], val(a), acc(grads, b, n));
            }
            &Op::SumSquares(a) => {
                let n = self.nodes[a].value().len();
                let two = T::one() + T::one();
                axpy(two * g[0], val(a), acc(grads, a, n));
            }
            Op::Dropout(a, mask) => {
                for ((d, &gv), &mv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(mask) {
                    *d += gv * mv;
                }
            }
            &Op::MemoryWrite(mem, z, h) => {
                let (k, l) = self.nodes[mem].value().shape().dims();
                let (mv, zv, hv) = (val(mem), val(z), val(h));
                {
                    let dm = acc(grads, mem, k * l);
                    for r in 0..k {
                        for j in 0..l {
                            dm[r * l + j] += (T::one() - zv[j]) * g[r * l + j];
                        }
                    }
                }
                {
                    let dz = acc(grads, z, l);
                    for r in 0..k {
                        for j in 0..l {
                            dz[j] += g[r * l + j] * (hv[r] - mv[r * l + j]);
                        }
                    }
                }
                let dh = acc(grads, h, k);
                for (r, d) in dh.iter_mut().enumerate() {
                    *d += dot(&g[r * l..(r + 1) * l], zv);
                }
            }
            Op::SoftmaxXent(a, gold, p) => {
                let d = acc(grads, *a, p.len());
                for (j, (dv, &pv)) in d.iter_mut().zip(p).enumerate() {
                    let t = if j == *gold { T::one() } else { T::zero() };
                    *dv += g[0] * (pv - t);
                }
            }
            &Op::SigmoidXent(a, y) => {
                let x = self.nodes[a].value().item();
                acc(grads, a, 1)[0] += g[0] * (sigmoid(x) - y);
            }
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], i: usize, n: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_values<T: Real>(x: &[T]) -> Vec<T> {
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradients produced by one backward pass.
pub struct GradStore<T> {
    tape: u32,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Shape>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> GradStore<T> {
    /// Gradient of the root with respect to `v`; `None` if `v` does not reach the root.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        let g = self.grads.get(v.index())?.as_ref()?;
        Some(Tensor::new(self.shapes[v.index()], g.clone()).expect("gradient matches shape"))
    }

    /// Gradients for every parameter bound on the tape. Parameters that did not
    /// reach the root get an explicit zero tensor.
    pub fn params(&self, params: &ParameterSet<T>) -> Gradients<T> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; params.len()];
        for &(id, node) in &self.params {
            let shape = self.shapes[node];
            let t = match &self.grads[node] {
                Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches shape"),
                None => Tensor::zeros(shape),
            };
            out[id.index()] = Some(t);
        }
        Gradients::from_vec(out)
    }
}

/// The standalone softmax used outside a tape (e.g. when tracing).
pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    Ok(softmax_values(x))
}
