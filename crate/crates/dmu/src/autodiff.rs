//! Tape-based reverse-mode automatic differentiation over dense 2-D
//! arrays of `f64`.
//!
//! Every tensor lives on a [`Tape`] and is addressed by a [`TensorId`].
//! The forward pass appends nodes; [`Tape::backward`] walks the tape in
//! reverse and accumulates adjoints. A tape is built per unrolled
//! episode and discarded afterwards; adjoints at arbitrary interior
//! nodes stay readable after the backward pass, which is what the
//! memory-scaling controller uses to capture per-timestep gradient
//! norms.
//!
//! Layout convention: the leading axis is the batch, the trailing axis
//! holds features, so every tensor is `(batch, features)`. No
//! broadcasting beyond the row-wise bias add.

use ndarray::{s, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch, left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a scalar (1x1) root, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("backward already ran on this tape; reset adjoints first")]
    DoubleBackward,
    #[error("adjoint read before any backward pass")]
    NoBackwardYet,
    #[error("class index {index} out of range for {classes} classes")]
    BadClassIndex { index: usize, classes: usize },
    #[error("column range {start}..{end} out of bounds for width {cols}")]
    BadColumnRange {
        start: usize,
        end: usize,
        cols: usize,
    },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// A named trainable tensor. Lives outside any tape; models bind their
/// parameters onto a fresh tape at the start of every episode.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Array2<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        Parameter {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    Scale(TensorId, f64),
    OneMinus(TensorId),
    AddBias(TensorId, TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    ConcatCols(TensorId, TensorId),
    SliceCols(TensorId, usize, usize),
    MseLoss(TensorId, Array2<f64>),
    CrossEntropyLoss(TensorId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    adjoint: Array2<f64>,
    op: Op,
}

impl Node {
    fn new(value: Array2<f64>, op: Op) -> Self {
        let adjoint = Array2::zeros(value.dim());
        Node { value, adjoint, op }
    }
}

/// The recording tape. One tape per episode, confined to one worker.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

// sigma(z) = 1/(1+e^-z) for z >= 0, e^z/(1+e^z) for z < 0
fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> TensorId {
        self.nodes.push(Node::new(value, op));
        TensorId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Copy of a node's adjoint. Errors until a backward pass has run.
    pub fn adjoint(&self, id: TensorId) -> Result<Array2<f64>, AdError> {
        if !self.backward_done {
            return Err(AdError::NoBackwardYet);
        }
        Ok(self.nodes[id.0].adjoint.clone())
    }

    /// Record a leaf (input, constant, or bound parameter).
    pub fn leaf(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, Op::Leaf)
    }

    /// Zero-filled leaf, e.g. an initial recurrent state.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.leaf(Array2::zeros((rows, cols)))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<(), AdError> {
        let (la, lb) = (self.shape(a), self.shape(b));
        if la != lb {
            return Err(AdError::ShapeMismatch {
                op: op_name,
                lhs: la,
                rhs: lb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        self.elementwise("add", a, b)?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        self.elementwise("hadamard", a, b)?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    /// Multiply by a non-differentiated scalar constant (e.g. the memory
    /// scaling factor S).
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = &self.nodes[a.0].value * c;
        self.push(value, Op::Scale(a, c))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.mapv(|v| 1.0 - v);
        self.push(value, Op::OneMinus(a))
    }

    /// Add a `1 x n` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, AdError> {
        let (_, ac) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != ac {
            return Err(AdError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(a),
                rhs: (br, bc),
            });
        }
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.mapv(stable_sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Concatenate along the feature axis; rows must agree.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(AdError::ShapeMismatch {
                op: "concat_cols",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let mut value = Array2::zeros((ar, ac + bc));
        value
            .slice_mut(s![.., ..ac])
            .assign(&self.nodes[a.0].value);
        value
            .slice_mut(s![.., ac..])
            .assign(&self.nodes[b.0].value);
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(
        &mut self,
        a: TensorId,
        start: usize,
        end: usize,
    ) -> Result<TensorId, AdError> {
        let (_, cols) = self.shape(a);
        if start >= end || end > cols {
            return Err(AdError::BadColumnRange { start, end, cols });
        }
        let value = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        Ok(self.push(value, Op::SliceCols(a, start, end)))
    }

    /// Mean squared error against a constant target, averaged over all
    /// entries. Returns a `1 x 1` tensor.
    pub fn mse_loss(&mut self, pred: TensorId, target: &Array2<f64>) -> Result<TensorId, AdError> {
        let dp = self.shape(pred);
        if dp != target.dim() {
            return Err(AdError::ShapeMismatch {
                op: "mse_loss",
                lhs: dp,
                rhs: target.dim(),
            });
        }
        let diff = &self.nodes[pred.0].value - target;
        let n = (dp.0 * dp.1) as f64;
        let loss = diff.mapv(|v| v * v).sum() / n;
        let value = Array2::from_elem((1, 1), loss);
        Ok(self.push(value, Op::MseLoss(pred, target.clone())))
    }

    /// Mean softmax cross-entropy over the batch; one class index per
    /// row, computed via log-sum-exp. Returns a `1 x 1` tensor.
    pub fn cross_entropy_loss(
        &mut self,
        logits: TensorId,
        classes: &[usize],
    ) -> Result<TensorId, AdError> {
        let (rows, cols) = self.shape(logits);
        if classes.len() != rows {
            return Err(AdError::ShapeMismatch {
                op: "cross_entropy_loss",
                lhs: (rows, cols),
                rhs: (classes.len(), 1),
            });
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= cols) {
            return Err(AdError::BadClassIndex {
                index: bad,
                classes: cols,
            });
        }
        let mut total = 0.0;
        for (row, &class) in self.nodes[logits.0].value.rows().into_iter().zip(classes) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[class];
        }
        let value = Array2::from_elem((1, 1), total / rows as f64);
        Ok(self.push(value, Op::CrossEntropyLoss(logits, classes.to_vec())))
    }

    /// Reverse pass from a scalar root. Adjoints of all reachable nodes
    /// are populated; a second call without [`Tape::reset_adjoints`] is
    /// an error.
    pub fn backward(&mut self, root: TensorId) -> Result<(), AdError> {
        if self.backward_done {
            return Err(AdError::DoubleBackward);
        }
        let dim = self.shape(root);
        if dim != (1, 1) {
            return Err(AdError::NonScalarRoot(dim));
        }
        self.nodes[root.0].adjoint[[0, 0]] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].adjoint.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let adj = self.nodes[i].adjoint.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = adj.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&adj);
                    self.nodes[a.0].adjoint += &da;
                    self.nodes[b.0].adjoint += &db;
                }
                Op::Add(a, b) => {
                    self.nodes[a.0].adjoint += &adj;
                    self.nodes[b.0].adjoint += &adj;
                }
                Op::Hadamard(a, b) => {
                    let da = &adj * &self.nodes[b.0].value;
                    let db = &adj * &self.nodes[a.0].value;
                    self.nodes[a.0].adjoint += &da;
                    self.nodes[b.0].adjoint += &db;
                }
                Op::Scale(a, c) => {
                    self.nodes[a.0].adjoint += &(&adj * c);
                }
                Op::OneMinus(a) => {
                    self.nodes[a.0].adjoint -= &adj;
                }
                Op::AddBias(a, bias) => {
                    self.nodes[a.0].adjoint += &adj;
                    let db = adj.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.nodes[bias.0].adjoint += &db;
                }
                Op::Sigmoid(a) => {
                    let da = &adj * &self.nodes[i].value.mapv(|y| y * (1.0 - y));
                    self.nodes[a.0].adjoint += &da;
                }
                Op::Tanh(a) => {
                    let da = &adj * &self.nodes[i].value.mapv(|y| 1.0 - y * y);
                    self.nodes[a.0].adjoint += &da;
                }
                Op::ConcatCols(a, b) => {
                    let (_, ac) = self.shape(a);
                    let da = adj.slice(s![.., ..ac]).to_owned();
                    let db = adj.slice(s![.., ac..]).to_owned();
                    self.nodes[a.0].adjoint += &da;
                    self.nodes[b.0].adjoint += &db;
                }
                Op::SliceCols(a, start, end) => {
                    let mut slot = self.nodes[a.0].adjoint.slice_mut(s![.., start..end]);
                    slot += &adj;
                }
                Op::MseLoss(pred, target) => {
                    let root_adj = adj[[0, 0]];
                    let (r, c) = target.dim();
                    let n = (r * c) as f64;
                    let dp = (&self.nodes[pred.0].value - &target) * (2.0 * root_adj / n);
                    self.nodes[pred.0].adjoint += &dp;
                }
                Op::CrossEntropyLoss(logits, classes) => {
                    let root_adj = adj[[0, 0]];
                    let (rows, _) = self.shape(logits);
                    let mut dl = Array2::zeros(self.shape(logits));
                    for (r, &class) in classes.iter().enumerate() {
                        let row = self.nodes[logits.0].value.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        for (c, &v) in row.iter().enumerate() {
                            let sm = (v - max).exp() / denom;
                            let onehot = if c == class { 1.0 } else { 0.0 };
                            dl[[r, c]] = (sm - onehot) * root_adj / rows as f64;
                        }
                    }
                    self.nodes[logits.0].adjoint += &dl;
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Zero every adjoint and re-arm the tape for another backward pass.
    pub fn reset_adjoints(&mut self) {
        for node in &mut self.nodes {
            node.adjoint.fill(0.0);
        }
        self.backward_done = false;
    }
}
