//! Define-by-run reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded node stores its
//! forward value; [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar root with respect to every trainable leaf.

use std::collections::BTreeMap;

use super::linalg::Lu;
use super::{KernelError, Matrix};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities with `σ(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

/// The recorded operation of a node.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf {
        trainable: bool,
    },
    MatMul,
    Add,
    Sub,
    Scale(f64),
    /// Matrix times a 1x1 node.
    ScaleBy,
    Hadamard,
    Transpose,
    ConcatRows,
    ConcatCols,
    Slice {
        r0: usize,
        r1: usize,
        c0: usize,
        c1: usize,
    },
    Activation(Activation),
    Exp,
    /// Elementwise clamp; gradient passes only strictly inside the bounds.
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// Column vector to square diagonal matrix.
    Diag,
    LinearSolve,
    /// Mean of squared differences of two equally shaped inputs.
    MseReduction,
    FrobeniusNorm,
    Sum,
    Negate,
}

struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    value: Matrix,
    lu: Option<Lu>,
}

/// Gradients of a scalar with respect to trainable leaves.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Matrix)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Gradients for `ids` in order, moved out of the map.
    pub fn take_ordered(mut self, ids: &[NodeId]) -> Vec<Matrix> {
        ids.iter()
            .map(|id| self.grads.remove(id).expect("gradient for trainable leaf"))
            .collect()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

type KResult<T> = Result<T, KernelError>;

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).get(0, 0)
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, value: Matrix, lu: Option<Lu>) -> NodeId {
        self.nodes.push(Node { op, inputs, value, lu });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(OpKind::Leaf { trainable: true }, Vec::new(), value, None)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(OpKind::Leaf { trainable: false }, Vec::new(), value, None)
    }

    /// Records `op` applied to `inputs`, computing its forward value.
    pub fn record(&mut self, op: OpKind, inputs: &[NodeId]) -> KResult<NodeId> {
        for id in inputs {
            assert!(id.0 < self.nodes.len(), "node {:?} is not on this tape", id);
        }
        let arity_ok = match op {
            OpKind::Leaf { .. } => false,
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::ScaleBy
            | OpKind::Hadamard
            | OpKind::LinearSolve
            | OpKind::MseReduction => inputs.len() == 2,
            OpKind::ConcatRows | OpKind::ConcatCols => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(KernelError::Arity {
                op: op_name(&op),
                got: inputs.len(),
            });
        }
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let mut lu = None;
        let value = match &op {
            OpKind::Leaf { .. } => unreachable!(),
            OpKind::MatMul => v(0).matmul(v(1))?,
            OpKind::Add => v(0).try_add(v(1))?,
            OpKind::Sub => v(0).try_sub(v(1))?,
            OpKind::Scale(s) => v(0).scale(*s),
            OpKind::ScaleBy => {
                if v(1).shape() != (1, 1) {
                    return Err(mismatch("scale_by", v(0), v(1)));
                }
                v(0).scale(v(1).get(0, 0))
            }
            OpKind::Hadamard => v(0).hadamard(v(1))?,
            OpKind::Transpose => v(0).transpose(),
            OpKind::ConcatRows => {
                let parts: Vec<&Matrix> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                Matrix::vstack(&parts)?
            }
            OpKind::ConcatCols => {
                let parts: Vec<&Matrix> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                Matrix::hstack(&parts)?
            }
            OpKind::Slice { r0, r1, c0, c1 } => v(0).slice(*r0, *r1, *c0, *c1)?,
            OpKind::Activation(act) => v(0).map(|x| act.apply(x)),
            OpKind::Exp => v(0).map(f64::exp),
            OpKind::Clamp { lo, hi } => v(0).map(|x| x.clamp(*lo, *hi)),
            OpKind::Diag => {
                if v(0).cols() != 1 {
                    return Err(KernelError::ShapeMismatch {
                        op: "diag",
                        left: v(0).shape(),
                        right: (v(0).rows(), 1),
                    });
                }
                Matrix::diag(v(0).as_slice())
            }
            OpKind::LinearSolve => {
                let (a, b) = (v(0), v(1));
                if !a.is_square() {
                    return Err(KernelError::NotSquare {
                        op: "linear_solve",
                        shape: a.shape(),
                    });
                }
                if b.rows() != a.rows() {
                    return Err(mismatch("linear_solve", a, b));
                }
                let f = Lu::factor(a)?;
                let x = f.solve(b)?;
                lu = Some(f);
                x
            }
            OpKind::MseReduction => {
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(mismatch("mse_reduction", a, b));
                }
                Matrix::filled(1, 1, mse(a, b))
            }
            OpKind::FrobeniusNorm => Matrix::filled(1, 1, v(0).frobenius_norm()),
            OpKind::Sum => Matrix::filled(1, 1, v(0).sum()),
            OpKind::Negate => v(0).scale(-1.0),
        };
        Ok(self.push(op, inputs.to_vec(), value, lu))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Sub, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> KResult<NodeId> {
        self.record(OpKind::Scale(s), &[a])
    }

    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> KResult<NodeId> {
        self.record(OpKind::ScaleBy, &[a, s])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Hadamard, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Transpose, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> KResult<NodeId> {
        self.record(OpKind::ConcatRows, parts)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> KResult<NodeId> {
        self.record(OpKind::ConcatCols, parts)
    }

    pub fn slice(&mut self, a: NodeId, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> KResult<NodeId> {
        self.record(
            OpKind::Slice {
                r0: rows.start,
                r1: rows.end,
                c0: cols.start,
                c1: cols.end,
            },
            &[a],
        )
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> KResult<NodeId> {
        self.record(OpKind::Activation(act), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Exp, &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> KResult<NodeId> {
        self.record(OpKind::Clamp { lo, hi }, &[a])
    }

    pub fn diag(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Diag, &[a])
    }

    pub fn linear_solve(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::LinearSolve, &[a, b])
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> KResult<NodeId> {
        self.record(OpKind::MseReduction, &[a, b])
    }

    pub fn frobenius_norm(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::FrobeniusNorm, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn negate(&mut self, a: NodeId) -> KResult<NodeId> {
        self.record(OpKind::Negate, &[a])
    }

    /// Reverse sweep from a 1x1 root.
    pub fn backward(&self, root: NodeId) -> KResult<Gradients> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(KernelError::NonScalarRoot { shape });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let OpKind::Leaf { trainable } = node.op {
                if trainable {
                    adj[idx] = Some(g);
                }
                continue;
            }
            let inp = &node.inputs;
            let val = |i: usize| &self.nodes[inp[i].0].value;
            match &node.op {
                OpKind::Leaf { .. } => unreachable!(),
                OpKind::MatMul => {
                    accumulate(&mut adj, inp[0], g.matmul_nt(val(1))?);
                    accumulate(&mut adj, inp[1], val(0).matmul_tn(&g)?);
                }
                OpKind::Add => {
                    accumulate(&mut adj, inp[1], g.clone());
                    accumulate(&mut adj, inp[0], g);
                }
                OpKind::Sub => {
                    accumulate(&mut adj, inp[1], g.scale(-1.0));
                    accumulate(&mut adj, inp[0], g);
                }
                OpKind::Scale(s) => accumulate(&mut adj, inp[0], g.scale(*s)),
                OpKind::ScaleBy => {
                    let s = val(1).get(0, 0);
                    let ds = g.hadamard(val(0))?.sum();
                    accumulate(&mut adj, inp[1], Matrix::filled(1, 1, ds));
                    accumulate(&mut adj, inp[0], g.scale(s));
                }
                OpKind::Hadamard => {
                    accumulate(&mut adj, inp[0], g.hadamard(val(1))?);
                    accumulate(&mut adj, inp[1], g.hadamard(val(0))?);
                }
                OpKind::Transpose => accumulate(&mut adj, inp[0], g.transpose()),
                OpKind::ConcatRows => {
                    let mut r0 = 0;
                    for &id in inp {
                        let r = self.nodes[id.0].value.rows();
                        accumulate(&mut adj, id, g.slice(r0, r0 + r, 0, g.cols())?);
                        r0 += r;
                    }
                }
                OpKind::ConcatCols => {
                    let mut c0 = 0;
                    for &id in inp {
                        let c = self.nodes[id.0].value.cols();
                        accumulate(&mut adj, id, g.slice(0, g.rows(), c0, c0 + c)?);
                        c0 += c;
                    }
                }
                OpKind::Slice { r0, c0, .. } => {
                    let src = val(0);
                    match &mut adj[inp[0].0] {
                        Some(acc) => add_block(acc, *r0, *c0, &g),
                        slot @ None => {
                            let mut full = Matrix::zeros(src.rows(), src.cols());
                            full.set_block(*r0, *c0, &g);
                            *slot = Some(full);
                        }
                    }
                }
                OpKind::Activation(act) => {
                    let x = val(0);
                    let d: Vec<f64> = x
                        .as_slice()
                        .iter()
                        .zip(node.value.as_slice())
                        .zip(g.as_slice())
                        .map(|((&xi, &yi), &gi)| gi * act.derivative(xi, yi))
                        .collect();
                    accumulate(&mut adj, inp[0], Matrix::from_raw(x.rows(), x.cols(), d));
                }
                OpKind::Exp => accumulate(&mut adj, inp[0], g.hadamard(&node.value)?),
                OpKind::Clamp { lo, hi } => {
                    let x = val(0);
                    let d: Vec<f64> = x
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .map(|(&xi, &gi)| if xi > *lo && xi < *hi { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, inp[0], Matrix::from_raw(x.rows(), x.cols(), d));
                }
                OpKind::Diag => {
                    let n = g.rows();
                    let d: Vec<f64> = (0..n).map(|i| g.get(i, i)).collect();
                    accumulate(&mut adj, inp[0], Matrix::column(&d));
                }
                OpKind::LinearSolve => {
                    // X = A^{-1} B:  dB = A^{-T} G,  dA = -dB X^T
                    let lu = node.lu.as_ref().expect("factorization stored with solve node");
                    let lambda = lu.solve_transpose(&g)?;
                    accumulate(&mut adj, inp[0], lambda.matmul_nt(&node.value)?.scale(-1.0));
                    accumulate(&mut adj, inp[1], lambda);
                }
                OpKind::MseReduction => {
                    let (a, b) = (val(0), val(1));
                    let n = a.len();
                    let s = if n == 0 { 0.0 } else { 2.0 * g.get(0, 0) / n as f64 };
                    let diff = a.try_sub(b)?.scale(s);
                    accumulate(&mut adj, inp[1], diff.scale(-1.0));
                    accumulate(&mut adj, inp[0], diff);
                }
                OpKind::FrobeniusNorm => {
                    let norm = node.value.get(0, 0);
                    let s = if norm > 0.0 { g.get(0, 0) / norm } else { 0.0 };
                    accumulate(&mut adj, inp[0], val(0).scale(s));
                }
                OpKind::Sum => {
                    let x = val(0);
                    accumulate(&mut adj, inp[0], Matrix::filled(x.rows(), x.cols(), g.get(0, 0)));
                }
                OpKind::Negate => accumulate(&mut adj, inp[0], g.scale(-1.0)),
            }
        }

        let mut grads = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.op == (OpKind::Leaf { trainable: true }) {
                let g = adj[idx]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                grads.insert(NodeId(idx), g);
            }
        }
        // leaves recorded after the root cannot influence it
        for (idx, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if node.op == (OpKind::Leaf { trainable: true }) {
                grads.insert(NodeId(idx), Matrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn add_block(acc: &mut Matrix, r0: usize, c0: usize, g: &Matrix) {
    let cols = acc.cols();
    let data = acc.as_mut_slice();
    for i in 0..g.rows() {
        let row = &mut data[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + g.cols()];
        for (a, b) in row.iter_mut().zip(g.row(i)) {
            *a += b;
        }
    }
}

/// Mean of squared entrywise differences; zero for empty inputs.
pub fn mse(a: &Matrix, b: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    s / a.len() as f64
}

fn op_name(op: &OpKind) -> &'static str {
    match op {
        OpKind::Leaf { .. } => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Scale(_) => "scale",
        OpKind::ScaleBy => "scale_by",
        OpKind::Hadamard => "hadamard",
        OpKind::Transpose => "transpose",
        OpKind::ConcatRows => "concat_rows",
        OpKind::ConcatCols => "concat_cols",
        OpKind::Slice { .. } => "slice",
        OpKind::Activation(_) => "activation",
        OpKind::Exp => "exp",
        OpKind::Clamp { .. } => "clamp",
        OpKind::Diag => "diag",
        OpKind::LinearSolve => "linear_solve",
        OpKind::MseReduction => "mse_reduction",
        OpKind::FrobeniusNorm => "frobenius_norm",
        OpKind::Sum => "sum",
        OpKind::Negate => "negate",
    }
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` records a scalar on the tape from the given parameter leaves. Each
/// parameter entry `p` is perturbed by `step * max(1, |p|)`. Returns the
/// maximum over all entries of `|analytic - fd| / (|analytic| + |fd| + 1e-12)`.
pub fn grad_check<F>(f: F, point: &[Matrix], step: f64) -> KResult<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> KResult<NodeId>,
{
    let eval = |params: &[Matrix]| -> KResult<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
        let root = f(&mut tape, &ids)?;
        Ok(tape.scalar(root))
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = point.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &ids)?;
    let grads = tape.backward(root)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = point.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("gradient for every parameter");
        for e in 0..point[pi].len() {
            let base = point[pi].as_slice()[e];
            let h = step * base.abs().max(1.0);
            work[pi].as_mut_slice()[e] = base + h;
            let fp = eval(&work)?;
            work[pi].as_mut_slice()[e] = base - h;
            let fm = eval(&work)?;
            work[pi].as_mut_slice()[e] = base;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.as_slice()[e];
            worst = worst.max((a - fd).abs() / (a.abs() + fd.abs() + 1e-12));
        }
    }
    Ok(worst)
}
