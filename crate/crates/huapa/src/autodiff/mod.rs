//! Reverse-mode automatic differentiation over dense f64 buffers.
//!
//! The engine records a computation graph while the forward pass runs and
//! replays it in reverse to accumulate exact analytic gradients. It supplies
//! only the operations the dual-view attention model needs: matrix products,
//! elementwise maps, concatenation/stacking, row gathering, masked softmax
//! and cross-entropy. There is no broadcasting beyond `add_bias`, no views,
//! no fusion.
//!
//! A [`Value`] is a node handle: shape, data buffer, gradient buffer, and a
//! record of the producing operation. Graphs are built per forward pass and
//! dropped afterwards; parameter leaves (`Value::param`) persist across
//! passes and keep accumulating gradients until [`clear_grads`] resets them.
//!
//! ```
//! use huapa::autodiff::{backward, Value};
//!
//! let x = Value::param(vec![0.5, -1.0], &[2]);
//! let y = x.tanh().sum();
//! backward(&y).unwrap();
//! let g = x.grad();
//! assert!((g[0] - (1.0 - 0.5f64.tanh().powi(2))).abs() < 1e-15);
//! ```

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub mod check;

pub use check::{grad_check, grad_check_sampled};

/// Errors raised while building a graph or running backward.
#[derive(Debug, Clone, PartialEq)]
pub enum AdError {
    /// Operand shapes do not conform for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A row index fell outside the table passed to `gather_rows` or `row`.
    RowOutOfRange {
        op: &'static str,
        id: usize,
        rows: usize,
    },
    /// Slice bounds exceed the vector length.
    SliceOutOfRange {
        start: usize,
        len: usize,
        size: usize,
    },
    /// Every mask entry was false.
    EmptyAttentionSupport,
    /// Gold class index is not below the number of classes.
    ClassOutOfRange { gold: usize, classes: usize },
    /// `backward` was called on a non-scalar node.
    NonScalarRoot { shape: Vec<usize> },
    /// An operation received an empty operand list.
    EmptyInput { op: &'static str },
    /// The gradient checker hit a non-finite value at a leaf coordinate.
    NonFinite { leaf: usize, coord: usize },
}

impl fmt::Display for AdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            AdError::RowOutOfRange { op, id, rows } => {
                write!(f, "{op}: row id {id} out of range for {rows} rows")
            }
            AdError::SliceOutOfRange { start, len, size } => {
                write!(f, "slice: range {start}..{} out of range for length {size}", start + len)
            }
            AdError::EmptyAttentionSupport => write!(f, "empty attention support"),
            AdError::ClassOutOfRange { gold, classes } => {
                write!(f, "cross_entropy: gold class {gold} out of range for {classes} classes")
            }
            AdError::NonScalarRoot { shape } => {
                write!(f, "backward: root must be scalar, got shape {shape:?}")
            }
            AdError::EmptyInput { op } => write!(f, "{op}: empty input"),
            AdError::NonFinite { leaf, coord } => {
                write!(f, "grad_check: non-finite value at leaf {leaf}, coordinate {coord}")
            }
        }
    }
}

impl std::error::Error for AdError {}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Producing operation of a node, holding handles to its inputs.
enum Op {
    Leaf,
    Matmul(Value, Value),
    Matvec(Value, Value),
    AddBias(Value, Value),
    ElemAdd(Value, Value),
    ElemMul(Value, Value),
    Scale(Value, f64),
    Tanh(Value),
    Sigmoid(Value),
    Sum(Value),
    Concat(Value, Value),
    StackRows(Vec<Value>),
    Row(Value, usize),
    Slice {
        src: Value,
        start: usize,
    },
    GatherRows(Value, Vec<usize>),
    WeightedSum(Value, Value),
    MaskedSoftmax {
        scores: Value,
        mask: Vec<bool>,
        /// Log-probabilities computed through log-sum-exp at forward time,
        /// read by `cross_entropy` so confident heads keep a finite loss.
        log_probs: Vec<f64>,
    },
    CrossEntropy(Value, usize),
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Handle to a node in the computation graph.
///
/// Cloning a `Value` clones the handle, not the buffers. `data` holds the
/// forward result; `grad` accumulates `d(root)/d(self)` across `backward`
/// calls until reset.
#[derive(Clone)]
pub struct Value {
    inner: Rc<Node>,
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Value")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Value {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Value {
        debug_assert_eq!(data.len(), numel(&shape));
        let n = data.len();
        Value {
            inner: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(vec![0.0; n]),
                requires_grad,
                op,
            }),
        }
    }

    /// Trainable leaf: gradients accumulate here during `backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Value {
        assert_eq!(data.len(), numel(shape), "param: data length must match shape");
        Value::new(shape.to_vec(), data, true, Op::Leaf)
    }

    /// Non-trainable leaf. Backward never routes gradient into it.
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Value {
        assert_eq!(data.len(), numel(shape), "constant: data length must match shape");
        Value::new(shape.to_vec(), data, false, Op::Leaf)
    }

    /// Scalar constant of shape `[1]`.
    pub fn scalar(x: f64) -> Value {
        Value::constant(vec![x], &[1])
    }

    /// All-zero constant.
    pub fn zeros(shape: &[usize]) -> Value {
        Value::constant(vec![0.0; numel(shape)], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the forward buffer (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Copy of the gradient buffer.
    pub fn grad(&self) -> Vec<f64> {
        self.inner.grad.borrow().clone()
    }

    /// Scalar payload of a `[1]` node.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar value");
        self.inner.data.borrow()[0]
    }

    /// Overwrite the forward buffer in place. Used by the optimizer and the
    /// finite-difference checker; only meaningful on leaves.
    pub fn set_data(&self, data: &[f64]) {
        assert_eq!(data.len(), self.len(), "set_data: length mismatch");
        self.inner.data.borrow_mut().copy_from_slice(data);
    }

    /// Reset the gradient buffer to zero.
    pub fn zero_grad(&self) {
        for g in self.inner.grad.borrow_mut().iter_mut() {
            *g = 0.0;
        }
    }

    /// Overwrite the gradient buffer. Used by gradient clipping.
    pub fn set_grad(&self, grad: &[f64]) {
        assert_eq!(grad.len(), self.len(), "set_grad: length mismatch");
        self.inner.grad.borrow_mut().copy_from_slice(grad);
    }

    fn id(&self) -> u64 {
        self.inner.id
    }

    fn add_grad(&self, adj: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        for (gi, ai) in g.iter_mut().zip(adj) {
            *gi += ai;
        }
    }

    fn rows_cols(&self) -> Option<(usize, usize)> {
        match self.inner.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    // ---- elementwise unary ----

    pub fn tanh(&self) -> Value {
        let out: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        Value::new(self.shape().to_vec(), out, self.requires_grad(), Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Value {
        let out: Vec<f64> = self.data().iter().map(|x| sigmoid_scalar(*x)).collect();
        Value::new(self.shape().to_vec(), out, self.requires_grad(), Op::Sigmoid(self.clone()))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&self, c: f64) -> Value {
        let out: Vec<f64> = self.data().iter().map(|x| c * x).collect();
        Value::new(self.shape().to_vec(), out, self.requires_grad(), Op::Scale(self.clone(), c))
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&self) -> Value {
        let s: f64 = self.data().iter().sum();
        Value::new(vec![1], vec![s], self.requires_grad(), Op::Sum(self.clone()))
    }

    /// Row `i` of a 2-D node as a 1-D vector.
    pub fn row(&self, i: usize) -> Result<Value, AdError> {
        let (r, c) = self.rows_cols().ok_or_else(|| AdError::ShapeMismatch {
            op: "row",
            lhs: self.shape().to_vec(),
            rhs: vec![],
        })?;
        if i >= r {
            return Err(AdError::RowOutOfRange { op: "row", id: i, rows: r });
        }
        let out = self.data()[i * c..(i + 1) * c].to_vec();
        Ok(Value::new(vec![c], out, self.requires_grad(), Op::Row(self.clone(), i)))
    }

    /// Contiguous sub-vector `start..start+len` of a 1-D node.
    pub fn slice(&self, start: usize, len: usize) -> Result<Value, AdError> {
        if self.shape().len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "slice",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = self.len();
        if start + len > n {
            return Err(AdError::SliceOutOfRange { start, len, size: n });
        }
        let out = self.data()[start..start + len].to_vec();
        Ok(Value::new(vec![len], out, self.requires_grad(), Op::Slice { src: self.clone(), start }))
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_same_shape(op: &'static str, x: &Value, y: &Value) -> Result<(), AdError> {
    if x.shape() != y.shape() {
        return Err(AdError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// `A[m,k] * B[k,n] -> [m,n]`, row-major.
pub fn matmul(a: &Value, b: &Value) -> Result<Value, AdError> {
    let ((m, k), (k2, n)) = match (a.rows_cols(), b.rows_cols()) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    };
    if k != k2 {
        return Err(AdError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = ad[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    drop(ad);
    drop(bd);
    let rg = a.requires_grad() || b.requires_grad();
    Ok(Value::new(vec![m, n], out, rg, Op::Matmul(a.clone(), b.clone())))
}

/// `A[m,k] * x[k] -> [m]`.
pub fn matvec(a: &Value, x: &Value) -> Result<Value, AdError> {
    let (m, k) = a.rows_cols().ok_or_else(|| AdError::ShapeMismatch {
        op: "matvec",
        lhs: a.shape().to_vec(),
        rhs: x.shape().to_vec(),
    })?;
    if x.shape() != [k] {
        return Err(AdError::ShapeMismatch {
            op: "matvec",
            lhs: a.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let ad = a.data();
    let xd = x.data();
    let mut out = vec![0.0; m];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let mut s = 0.0;
        for (av, xv) in arow.iter().zip(xd.iter()) {
            s += av * xv;
        }
        out[i] = s;
    }
    drop(ad);
    drop(xd);
    let rg = a.requires_grad() || x.requires_grad();
    Ok(Value::new(vec![m], out, rg, Op::Matvec(a.clone(), x.clone())))
}

/// Add a 1-D bias `b[n]` to every row of `X[m,n]`.
pub fn add_bias(x: &Value, b: &Value) -> Result<Value, AdError> {
    let (m, n) = x.rows_cols().ok_or_else(|| AdError::ShapeMismatch {
        op: "add_bias",
        lhs: x.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    if b.shape() != [n] {
        return Err(AdError::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let xd = x.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = xd[i * n + j] + bd[j];
        }
    }
    drop(xd);
    drop(bd);
    let rg = x.requires_grad() || b.requires_grad();
    Ok(Value::new(vec![m, n], out, rg, Op::AddBias(x.clone(), b.clone())))
}

pub fn elem_add(x: &Value, y: &Value) -> Result<Value, AdError> {
    require_same_shape("elem_add", x, y)?;
    let out: Vec<f64> = x.data().iter().zip(y.data().iter()).map(|(a, b)| a + b).collect();
    let rg = x.requires_grad() || y.requires_grad();
    Ok(Value::new(x.shape().to_vec(), out, rg, Op::ElemAdd(x.clone(), y.clone())))
}

pub fn elem_mul(x: &Value, y: &Value) -> Result<Value, AdError> {
    require_same_shape("elem_mul", x, y)?;
    let out: Vec<f64> = x.data().iter().zip(y.data().iter()).map(|(a, b)| a * b).collect();
    let rg = x.requires_grad() || y.requires_grad();
    Ok(Value::new(x.shape().to_vec(), out, rg, Op::ElemMul(x.clone(), y.clone())))
}

/// Concatenate two vectors end to end, or two matrices side by side.
///
/// 1-D operands `[a]`, `[b]` give `[a+b]`; 2-D operands `[m,a]`, `[m,b]`
/// give `[m,a+b]` and must agree on the row count.
pub fn concat_cols(x: &Value, y: &Value) -> Result<Value, AdError> {
    match (x.shape(), y.shape()) {
        ([a], [b]) => {
            let mut out = Vec::with_capacity(a + b);
            out.extend_from_slice(&x.data());
            out.extend_from_slice(&y.data());
            let rg = x.requires_grad() || y.requires_grad();
            Ok(Value::new(vec![a + b], out, rg, Op::Concat(x.clone(), y.clone())))
        }
        ([m, a], [m2, b]) if m == m2 => {
            let (m, a, b) = (*m, *a, *b);
            let xd = x.data();
            let yd = y.data();
            let mut out = Vec::with_capacity(m * (a + b));
            for i in 0..m {
                out.extend_from_slice(&xd[i * a..(i + 1) * a]);
                out.extend_from_slice(&yd[i * b..(i + 1) * b]);
            }
            drop(xd);
            drop(yd);
            let rg = x.requires_grad() || y.requires_grad();
            Ok(Value::new(vec![m, a + b], out, rg, Op::Concat(x.clone(), y.clone())))
        }
        _ => Err(AdError::ShapeMismatch {
            op: "concat_cols",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        }),
    }
}

/// Stack equal-length 1-D vectors into a `[L,d]` matrix.
pub fn stack_rows(xs: &[Value]) -> Result<Value, AdError> {
    if xs.is_empty() {
        return Err(AdError::EmptyInput { op: "stack_rows" });
    }
    let d = match xs[0].shape() {
        [d] => *d,
        other => {
            return Err(AdError::ShapeMismatch {
                op: "stack_rows",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    let mut out = Vec::with_capacity(xs.len() * d);
    let mut rg = false;
    for x in xs {
        if x.shape() != [d] {
            return Err(AdError::ShapeMismatch {
                op: "stack_rows",
                lhs: vec![d],
                rhs: x.shape().to_vec(),
            });
        }
        out.extend_from_slice(&x.data());
        rg |= x.requires_grad();
    }
    Ok(Value::new(vec![xs.len(), d], out, rg, Op::StackRows(xs.to_vec())))
}

/// Select rows of `table[V,d]` by index. Repeated ids are allowed; their
/// gradients accumulate into the same source row.
pub fn gather_rows(table: &Value, ids: &[usize]) -> Result<Value, AdError> {
    let (v, d) = table.rows_cols().ok_or_else(|| AdError::ShapeMismatch {
        op: "gather_rows",
        lhs: table.shape().to_vec(),
        rhs: vec![],
    })?;
    if ids.is_empty() {
        return Err(AdError::EmptyInput { op: "gather_rows" });
    }
    let td = table.data();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(AdError::RowOutOfRange { op: "gather_rows", id, rows: v });
        }
        out.extend_from_slice(&td[id * d..(id + 1) * d]);
    }
    drop(td);
    Ok(Value::new(
        vec![ids.len(), d],
        out,
        table.requires_grad(),
        Op::GatherRows(table.clone(), ids.to_vec()),
    ))
}

/// `sum_j w[j] * H[j,:] -> [d]`. Gradient flows into both `H` and `w`.
pub fn weighted_sum(h: &Value, w: &Value) -> Result<Value, AdError> {
    let (l, d) = h.rows_cols().ok_or_else(|| AdError::ShapeMismatch {
        op: "weighted_sum",
        lhs: h.shape().to_vec(),
        rhs: w.shape().to_vec(),
    })?;
    if w.shape() != [l] {
        return Err(AdError::ShapeMismatch {
            op: "weighted_sum",
            lhs: h.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let hd = h.data();
    let wd = w.data();
    let mut out = vec![0.0; d];
    for j in 0..l {
        let wj = wd[j];
        if wj == 0.0 {
            continue;
        }
        for (o, hv) in out.iter_mut().zip(&hd[j * d..(j + 1) * d]) {
            *o += wj * hv;
        }
    }
    drop(hd);
    drop(wd);
    let rg = h.requires_grad() || w.requires_grad();
    Ok(Value::new(vec![d], out, rg, Op::WeightedSum(h.clone(), w.clone())))
}

/// Softmax over the unmasked positions of a 1-D score vector.
///
/// Masked positions get weight exactly zero and pass no gradient. The
/// largest unmasked score is subtracted before exponentiation.
pub fn masked_softmax(scores: &Value, mask: &[bool]) -> Result<Value, AdError> {
    if scores.shape().len() != 1 || scores.len() != mask.len() {
        return Err(AdError::ShapeMismatch {
            op: "masked_softmax",
            lhs: scores.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(AdError::EmptyAttentionSupport);
    }
    let sd = scores.data();
    let mut max = f64::NEG_INFINITY;
    for (s, &m) in sd.iter().zip(mask) {
        if m && *s > max {
            max = *s;
        }
    }
    let mut z = 0.0;
    let mut out = vec![0.0; sd.len()];
    for (i, (s, &m)) in sd.iter().zip(mask).enumerate() {
        if m {
            let e = (s - max).exp();
            out[i] = e;
            z += e;
        }
    }
    let log_z = z.ln();
    let mut log_probs = vec![f64::NEG_INFINITY; sd.len()];
    for (i, (s, &m)) in sd.iter().zip(mask).enumerate() {
        if m {
            out[i] /= z;
            log_probs[i] = (s - max) - log_z;
        }
    }
    drop(sd);
    Ok(Value::new(
        vec![mask.len()],
        out,
        scores.requires_grad(),
        Op::MaskedSoftmax {
            scores: scores.clone(),
            mask: mask.to_vec(),
            log_probs,
        },
    ))
}

/// Softmax with full support.
pub fn softmax(scores: &Value) -> Result<Value, AdError> {
    masked_softmax(scores, &vec![true; scores.len()])
}

/// `-log p[gold]` for a probability vector `p[C]`.
///
/// When `p` was produced by [`masked_softmax`], the loss is read from the
/// log-sum-exp form recorded at forward time rather than from `ln(p[gold])`,
/// so a confident head cannot underflow to an infinite loss prematurely.
pub fn cross_entropy(p: &Value, gold: usize) -> Result<Value, AdError> {
    if p.shape().len() != 1 {
        return Err(AdError::ShapeMismatch {
            op: "cross_entropy",
            lhs: p.shape().to_vec(),
            rhs: vec![],
        });
    }
    let classes = p.len();
    if gold >= classes {
        return Err(AdError::ClassOutOfRange { gold, classes });
    }
    let loss = match &p.inner.op {
        Op::MaskedSoftmax { log_probs, .. } => -log_probs[gold],
        _ => -p.data()[gold].ln(),
    };
    Ok(Value::new(
        vec![1],
        vec![loss],
        p.requires_grad(),
        Op::CrossEntropy(p.clone(), gold),
    ))
}

/// Creation-ordered record of the nodes reachable from a root.
///
/// Inputs are always created before the operations that consume them, so the
/// creation order is a topological order: walking the list in reverse visits
/// every node after all of its consumers. `backward` replays a trace this way.
pub struct Tape {
    nodes: Vec<Value>,
}

impl Tape {
    /// Collect the subgraph reachable from `root`, sorted by creation order.
    pub fn trace(root: &Value) -> Tape {
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            v.for_each_input(|inp| stack.push(inp.clone()));
            nodes.push(v);
        }
        nodes.sort_by_key(|v| v.id());
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Value] {
        &self.nodes
    }
}

impl Value {
    fn for_each_input<F: FnMut(&Value)>(&self, mut f: F) {
        match &self.inner.op {
            Op::Leaf => {}
            Op::Matmul(a, b)
            | Op::Matvec(a, b)
            | Op::AddBias(a, b)
            | Op::ElemAdd(a, b)
            | Op::ElemMul(a, b)
            | Op::Concat(a, b)
            | Op::WeightedSum(a, b) => {
                f(a);
                f(b);
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Row(a, _)
            | Op::Slice { src: a, .. }
            | Op::GatherRows(a, _)
            | Op::MaskedSoftmax { scores: a, .. }
            | Op::CrossEntropy(a, _) => f(a),
            Op::StackRows(xs) => {
                for x in xs {
                    f(x);
                }
            }
        }
    }
}

type Adjoints = HashMap<u64, Vec<f64>>;

fn accum(sink: &mut Adjoints, v: &Value, f: impl FnOnce(&mut [f64])) {
    if !v.requires_grad() {
        return;
    }
    let buf = sink.entry(v.id()).or_insert_with(|| vec![0.0; v.len()]);
    f(buf);
}

/// Propagate gradients from a scalar root back to every leaf that requires
/// them.
///
/// Gradients accumulate: a second `backward` without [`clear_grads`] in
/// between doubles the stored leaf gradients.
pub fn backward(root: &Value) -> Result<(), AdError> {
    if root.len() != 1 {
        return Err(AdError::NonScalarRoot { shape: root.shape().to_vec() });
    }
    let tape = Tape::trace(root);
    let mut adj: Adjoints = HashMap::new();
    adj.insert(root.id(), vec![1.0]);
    for v in tape.nodes().iter().rev() {
        let Some(a) = adj.remove(&v.id()) else { continue };
        propagate(v, &a, &mut adj);
        if v.requires_grad() {
            v.add_grad(&a);
        }
    }
    Ok(())
}

/// Zero the gradient buffers of the given values.
pub fn clear_grads(values: &[Value]) {
    for v in values {
        v.zero_grad();
    }
}

fn propagate(v: &Value, adj: &[f64], sink: &mut Adjoints) {
    match &v.inner.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = a.rows_cols().unwrap();
            let n = b.rows_cols().unwrap().1;
            if a.requires_grad() {
                let bd = b.data();
                accum(sink, a, |da| {
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += adj[i * n + j] * bd[l * n + j];
                            }
                            da[i * k + l] += s;
                        }
                    }
                });
            }
            if b.requires_grad() {
                let ad = a.data();
                accum(sink, b, |db| {
                    for l in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += ad[i * k + l] * adj[i * n + j];
                            }
                            db[l * n + j] += s;
                        }
                    }
                });
            }
        }
        Op::Matvec(a, x) => {
            let (m, k) = a.rows_cols().unwrap();
            if a.requires_grad() {
                let xd = x.data();
                accum(sink, a, |da| {
                    for i in 0..m {
                        let ai = adj[i];
                        if ai == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            da[i * k + j] += ai * xd[j];
                        }
                    }
                });
            }
            if x.requires_grad() {
                let ad = a.data();
                accum(sink, x, |dx| {
                    for i in 0..m {
                        let ai = adj[i];
                        if ai == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            dx[j] += ai * ad[i * k + j];
                        }
                    }
                });
            }
        }
        Op::AddBias(x, b) => {
            let (m, n) = x.rows_cols().unwrap();
            accum(sink, x, |dx| {
                for (d, a) in dx.iter_mut().zip(adj) {
                    *d += a;
                }
            });
            accum(sink, b, |db| {
                for i in 0..m {
                    for j in 0..n {
                        db[j] += adj[i * n + j];
                    }
                }
            });
        }
        Op::ElemAdd(x, y) => {
            accum(sink, x, |dx| {
                for (d, a) in dx.iter_mut().zip(adj) {
                    *d += a;
                }
            });
            accum(sink, y, |dy| {
                for (d, a) in dy.iter_mut().zip(adj) {
                    *d += a;
                }
            });
        }
        Op::ElemMul(x, y) => {
            if x.requires_grad() {
                let yd = y.data();
                accum(sink, x, |dx| {
                    for ((d, a), yv) in dx.iter_mut().zip(adj).zip(yd.iter()) {
                        *d += a * yv;
                    }
                });
            }
            if y.requires_grad() {
                let xd = x.data();
                accum(sink, y, |dy| {
                    for ((d, a), xv) in dy.iter_mut().zip(adj).zip(xd.iter()) {
                        *d += a * xv;
                    }
                });
            }
        }
        Op::Scale(x, c) => {
            accum(sink, x, |dx| {
                for (d, a) in dx.iter_mut().zip(adj) {
                    *d += c * a;
                }
            });
        }
        Op::Tanh(x) => {
            let yd = v.data();
            accum(sink, x, |dx| {
                for ((d, a), y) in dx.iter_mut().zip(adj).zip(yd.iter()) {
                    *d += a * (1.0 - y * y);
                }
            });
        }
        Op::Sigmoid(x) => {
            let yd = v.data();
            accum(sink, x, |dx| {
                for ((d, a), y) in dx.iter_mut().zip(adj).zip(yd.iter()) {
                    *d += a * y * (1.0 - y);
                }
            });
        }
        Op::Sum(x) => {
            let a = adj[0];
            accum(sink, x, |dx| {
                for d in dx.iter_mut() {
                    *d += a;
                }
            });
        }
        Op::Concat(x, y) => match (x.shape(), y.shape()) {
            ([a], [_b]) => {
                let a = *a;
                accum(sink, x, |dx| {
                    for (d, g) in dx.iter_mut().zip(&adj[..a]) {
                        *d += g;
                    }
                });
                accum(sink, y, |dy| {
                    for (d, g) in dy.iter_mut().zip(&adj[a..]) {
                        *d += g;
                    }
                });
            }
            ([m, a], [_, b]) => {
                let (m, a, b) = (*m, *a, *b);
                let w = a + b;
                accum(sink, x, |dx| {
                    for i in 0..m {
                        for j in 0..a {
                            dx[i * a + j] += adj[i * w + j];
                        }
                    }
                });
                accum(sink, y, |dy| {
                    for i in 0..m {
                        for j in 0..b {
                            dy[i * b + j] += adj[i * w + a + j];
                        }
                    }
                });
            }
            _ => unreachable!("concat shapes validated at construction"),
        },
        Op::StackRows(xs) => {
            let d = xs[0].len();
            for (j, x) in xs.iter().enumerate() {
                accum(sink, x, |dx| {
                    for (dv, a) in dx.iter_mut().zip(&adj[j * d..(j + 1) * d]) {
                        *dv += a;
                    }
                });
            }
        }
        Op::Row(x, i) => {
            let (_, c) = x.rows_cols().unwrap();
            let i = *i;
            accum(sink, x, |dx| {
                for (d, a) in dx[i * c..(i + 1) * c].iter_mut().zip(adj) {
                    *d += a;
                }
            });
        }
        Op::Slice { src, start } => {
            let start = *start;
            let len = v.len();
            accum(sink, src, |dx| {
                for (d, a) in dx[start..start + len].iter_mut().zip(adj) {
                    *d += a;
                }
            });
        }
        Op::GatherRows(table, ids) => {
            if table.requires_grad() {
                let d = table.rows_cols().unwrap().1;
                accum(sink, table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (dv, a) in dt[id * d..(id + 1) * d].iter_mut().zip(&adj[r * d..(r + 1) * d]) {
                            *dv += a;
                        }
                    }
                });
            }
        }
        Op::WeightedSum(h, w) => {
            let (l, d) = h.rows_cols().unwrap();
            if h.requires_grad() {
                let wd = w.data();
                accum(sink, h, |dh| {
                    for j in 0..l {
                        let wj = wd[j];
                        if wj == 0.0 {
                            continue;
                        }
                        for (dv, a) in dh[j * d..(j + 1) * d].iter_mut().zip(adj) {
                            *dv += wj * a;
                        }
                    }
                });
            }
            if w.requires_grad() {
                let hd = h.data();
                accum(sink, w, |dw| {
                    for j in 0..l {
                        let mut s = 0.0;
                        for (hv, a) in hd[j * d..(j + 1) * d].iter().zip(adj) {
                            s += hv * a;
                        }
                        dw[j] += s;
                    }
                });
            }
        }
        Op::MaskedSoftmax { scores, mask, .. } => {
            if scores.requires_grad() {
                let yd = v.data();
                let mut dot = 0.0;
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        dot += adj[i] * yd[i];
                    }
                }
                accum(sink, scores, |ds| {
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            ds[i] += yd[i] * (adj[i] - dot);
                        }
                    }
                });
            }
        }
        Op::CrossEntropy(p, gold) => {
            if p.requires_grad() {
                let pg = p.data()[*gold];
                let gold = *gold;
                let a = adj[0];
                accum(sink, p, |dp| {
                    dp[gold] += -a / pg;
                });
            }
        }
    }
}
