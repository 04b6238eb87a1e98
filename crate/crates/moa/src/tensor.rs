//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: every forward pass records its operations on
//! a fresh [`Tape`], and [`Tensor::backward`] replays the tape in reverse.
//! Tensors are rank <= 2 (a vector is a 1 x n matrix, a scalar is `[1]`);
//! batched sequences are handled by flattening batch x seq into rows.
//! Broadcasting is limited to scalar-times-tensor, per-row scaling, and
//! row-vector addition.

use std::cell::RefCell;
use std::rc::Rc;

use crate::activations::ActivationKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// scalar-tensor (shape [1]) times tensor
    ScalarMul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Activation(ActivationKind, usize),
    ActivationDeriv(ActivationKind, usize),
    Sum(usize),
    SoftmaxRows(usize),
    CausalSoftmaxRows(usize),
    /// rows of `a` scaled by the column vector `s` (shape m x 1)
    RowScale(usize, usize),
    /// row vector (1 x n) added to every row of `a`
    AddRowVec(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    CrossEntropy(usize, Rc<Vec<usize>>),
    Rope {
        input: usize,
        pos_offset: usize,
        base: f64,
    },
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    RmsNorm {
        x: usize,
        gain: usize,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Rc<Tape> {
        Rc::new(Tape {
            nodes: RefCell::new(Vec::new()),
        })
    }

    pub fn len(self: &Rc<Tape>) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(self: &Rc<Tape>) -> bool {
        self.len() == 0
    }

    /// Record a leaf tensor. `shape` is `[n]`, `[m, n]`, or `[1]`.
    pub fn leaf(self: &Rc<Tape>, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Tensor {
        let (rows, cols) = split_shape(shape);
        assert_eq!(
            rows * cols,
            data.len(),
            "leaf shape {shape:?} does not match data length {}",
            data.len()
        );
        self.push(rows, cols, data, Op::Leaf, requires_grad)
    }

    pub fn scalar(self: &Rc<Tape>, v: f64) -> Tensor {
        self.leaf(&[1], vec![v], false)
    }

    /// Reset all gradient buffers to zero.
    pub fn zero_grads(self: &Rc<Tape>) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn push(self: &Rc<Tape>, rows: usize, cols: usize, value: Vec<f64>, op: Op, rg: bool) -> Tensor {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let len = value.len();
        nodes.push(Node {
            rows,
            cols,
            value,
            grad: vec![0.0; len],
            op,
            requires_grad: rg,
        });
        Tensor {
            tape: Rc::clone(self),
            id,
        }
    }
}

fn split_shape(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [m, n] => (*m, *n),
        _ => panic!("unsupported tensor rank {}", shape.len()),
    }
}

/// Handle to a node on a tape. Cloning is cheap; the buffer is shared.
#[derive(Clone, Debug)]
pub struct Tensor {
    tape: Rc<Tape>,
    id: usize,
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        if n.rows == 1 && n.cols == 1 {
            vec![1]
        } else {
            vec![n.rows, n.cols]
        }
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].rows
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].cols
    }

    pub fn len(&self) -> usize {
        let nodes = self.tape.nodes.borrow();
        nodes[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        assert_eq!(n.value.len(), 1, "item() on non-scalar tensor");
        n.value[0]
    }

    pub fn grad(&self) -> Vec<f64> {
        let node = &self.tape.nodes.borrow()[self.id];
        debug_assert!(
            node.requires_grad,
            "reading the gradient of a constant leaf"
        );
        node.grad.clone()
    }

    pub fn tape(&self) -> &Rc<Tape> {
        &self.tape
    }

    fn same_tape(&self, other: &Tensor) {
        assert!(
            Rc::ptr_eq(&self.tape, &other.tape),
            "tensors belong to different tapes"
        );
    }

    fn binary_elementwise(&self, other: &Tensor, op: fn(usize, usize) -> Op, name: &str) -> Result<Tensor> {
        self.same_tape(other);
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            if a.rows != b.rows || a.cols != b.cols {
                return Err(Error::Dim(format!(
                    "{name}: shapes [{}, {}] and [{}, {}] differ",
                    a.rows, a.cols, b.rows, b.cols
                )));
            }
            let v: Vec<f64> = match op(0, 0) {
                Op::Add(..) => a.value.iter().zip(&b.value).map(|(x, y)| x + y).collect(),
                Op::Sub(..) => a.value.iter().zip(&b.value).map(|(x, y)| x - y).collect(),
                Op::Mul(..) => a.value.iter().zip(&b.value).map(|(x, y)| x * y).collect(),
                _ => unreachable!(),
            };
            (v, a.rows, a.cols)
        };
        Ok(self.tape.push(r, c, v, op(self.id, other.id), true))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Sub, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Mul, "hadamard")
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let (v, r, cl) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.value.iter().map(|x| x * c).collect(), a.rows, a.cols)
        };
        self.tape.push(r, cl, v, Op::Scale(self.id, c), true)
    }

    /// Multiply by a scalar tensor (shape `[1]`).
    pub fn scalar_mul(&self, s: &Tensor) -> Tensor {
        self.same_tape(s);
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let sv = &nodes[s.id];
            assert_eq!(sv.value.len(), 1, "scalar_mul: scale operand must be [1]");
            let sval = sv.value[0];
            let a = &nodes[self.id];
            (
                a.value.iter().map(|x| x * sval).collect(),
                a.rows,
                a.cols,
            )
        };
        self.tape.push(r, c, v, Op::ScalarMul(s.id, self.id), true)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other);
        let (v, m, n) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            if a.cols != b.rows {
                return Err(Error::Dim(format!(
                    "matmul: inner dimensions of [{}, {}] and [{}, {}] disagree",
                    a.rows, a.cols, b.rows, b.cols
                )));
            }
            let mut c = vec![0.0; a.rows * b.cols];
            matmul_into(&a.value, &b.value, &mut c, a.rows, a.cols, b.cols);
            (c, a.rows, b.cols)
        };
        Ok(self.tape.push(m, n, v, Op::MatMul(self.id, other.id), true))
    }

    pub fn transpose(&self) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut t = vec![0.0; a.value.len()];
            for i in 0..a.rows {
                for j in 0..a.cols {
                    t[j * a.rows + i] = a.value[i * a.cols + j];
                }
            }
            (t, a.cols, a.rows)
        };
        self.tape.push(r, c, v, Op::Transpose(self.id), true)
    }

    pub fn activation(&self, kind: ActivationKind) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.value.iter().map(|&x| kind.eval(x)).collect(),
                a.rows,
                a.cols,
            )
        };
        self.tape.push(r, c, v, Op::Activation(kind, self.id), true)
    }

    /// Elementwise first derivative of an activation, differentiable once
    /// more (backward uses the activation's second derivative).
    pub fn activation_deriv(&self, kind: ActivationKind) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.value.iter().map(|&x| kind.deriv(x)).collect(),
                a.rows,
                a.cols,
            )
        };
        self.tape.push(r, c, v, Op::ActivationDeriv(kind, self.id), true)
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.iter().sum()
        };
        self.tape.push(1, 1, vec![s], Op::Sum(self.id), true)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Softmax over the last axis, independently per row.
    pub fn softmax_rows(&self) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut out = vec![0.0; a.value.len()];
            for i in 0..a.rows {
                softmax_slice(&a.value[i * a.cols..(i + 1) * a.cols], &mut out[i * a.cols..(i + 1) * a.cols]);
            }
            (out, a.rows, a.cols)
        };
        self.tape.push(r, c, v, Op::SoftmaxRows(self.id), true)
    }

    /// Softmax over columns `0..=i` of row `i`; entries above the diagonal
    /// are zero. Input must be square (attention scores).
    pub fn causal_softmax_rows(&self) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert_eq!(a.rows, a.cols, "causal_softmax_rows: input must be square");
            let mut out = vec![0.0; a.value.len()];
            for i in 0..a.rows {
                softmax_slice(
                    &a.value[i * a.cols..i * a.cols + i + 1],
                    &mut out[i * a.cols..i * a.cols + i + 1],
                );
            }
            (out, a.rows, a.cols)
        };
        self.tape.push(r, c, v, Op::CausalSoftmaxRows(self.id), true)
    }

    /// Scale row `i` of `self` by `s[i]`; `s` has shape m x 1.
    pub fn row_scale(&self, s: &Tensor) -> Result<Tensor> {
        self.same_tape(s);
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let sv = &nodes[s.id];
            if sv.rows != a.rows || sv.cols != 1 {
                return Err(Error::Dim(format!(
                    "row_scale: scale shape [{}, {}] does not match {} rows",
                    sv.rows, sv.cols, a.rows
                )));
            }
            let mut out = vec![0.0; a.value.len()];
            for i in 0..a.rows {
                let f = sv.value[i];
                for j in 0..a.cols {
                    out[i * a.cols + j] = a.value[i * a.cols + j] * f;
                }
            }
            (out, a.rows, a.cols)
        };
        Ok(self.tape.push(r, c, v, Op::RowScale(self.id, s.id), true))
    }

    /// Add the row vector `b` (1 x n) to every row of `self`.
    pub fn add_row_vec(&self, b: &Tensor) -> Result<Tensor> {
        self.same_tape(b);
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let bv = &nodes[b.id];
            if bv.rows != 1 || bv.cols != a.cols {
                return Err(Error::Dim(format!(
                    "add_row_vec: vector shape [{}, {}] does not match {} columns",
                    bv.rows, bv.cols, a.cols
                )));
            }
            let mut out = a.value.clone();
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[i * a.cols + j] += bv.value[j];
                }
            }
            (out, a.rows, a.cols)
        };
        Ok(self.tape.push(r, c, v, Op::AddRowVec(self.id, b.id), true))
    }

    /// Row lookup: `self` is a table [v x d], output is [ids.len() x d].
    pub fn gather_rows(&self, ids: &[usize]) -> Tensor {
        let ids = Rc::new(ids.to_vec());
        let (v, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut out = Vec::with_capacity(ids.len() * a.cols);
            for &id in ids.iter() {
                assert!(id < a.rows, "gather_rows: id {id} out of range {}", a.rows);
                out.extend_from_slice(&a.value[id * a.cols..(id + 1) * a.cols]);
            }
            (out, a.cols)
        };
        let r = ids.len();
        self.tape
            .push(r, c, v, Op::GatherRows(self.id, ids), true)
    }

    /// Mean next-token cross-entropy in nats. `self` is logits [n x v].
    pub fn cross_entropy(&self, targets: &[usize]) -> Tensor {
        let targets = Rc::new(targets.to_vec());
        let loss = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert_eq!(a.rows, targets.len(), "cross_entropy: one target per row");
            let mut total = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                assert!(t < a.cols, "cross_entropy: target {t} out of range");
                let row = &a.value[i * a.cols..(i + 1) * a.cols];
                total += log_sum_exp(row) - row[t];
            }
            total / targets.len() as f64
        };
        self.tape
            .push(1, 1, vec![loss], Op::CrossEntropy(self.id, targets), true)
    }

    /// Rotary position embedding over adjacent pairs; rows are positions
    /// `pos_offset..pos_offset+rows`, columns one attention head.
    pub fn rope(&self, pos_offset: usize, base: f64) -> Tensor {
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert!(a.cols % 2 == 0, "rope: head dimension must be even");
            let mut out = vec![0.0; a.value.len()];
            rope_apply(&a.value, &mut out, a.rows, a.cols, pos_offset, base, false);
            (out, a.rows, a.cols)
        };
        self.tape.push(
            r,
            c,
            v,
            Op::Rope {
                input: self.id,
                pos_offset,
                base,
            },
            true,
        )
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let (v, r) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert!(start + len <= a.cols, "slice_cols out of range");
            let mut out = Vec::with_capacity(a.rows * len);
            for i in 0..a.rows {
                out.extend_from_slice(&a.value[i * a.cols + start..i * a.cols + start + len]);
            }
            (out, a.rows)
        };
        self.tape.push(r, len, v, Op::SliceCols(self.id, start), true)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        let (v, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert!(start + len <= a.rows, "slice_rows out of range");
            (
                a.value[start * a.cols..(start + len) * a.cols].to_vec(),
                a.cols,
            )
        };
        self.tape.push(len, c, v, Op::SliceRows(self.id, start), true)
    }

    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tape = Rc::clone(&parts[0].tape);
        let (v, r, c) = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[parts[0].id].rows;
            let total: usize = parts.iter().map(|p| nodes[p.id].cols).sum();
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    let n = &nodes[p.id];
                    assert_eq!(n.rows, rows, "concat_cols: row mismatch");
                    out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
                }
            }
            (out, rows, total)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        tape.push(r, c, v, Op::ConcatCols(ids), true)
    }

    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tape = Rc::clone(&parts[0].tape);
        let (v, r, c) = {
            let nodes = tape.nodes.borrow();
            let cols = nodes[parts[0].id].cols;
            let total: usize = parts.iter().map(|p| nodes[p.id].rows).sum();
            let mut out = Vec::with_capacity(total * cols);
            for p in parts {
                let n = &nodes[p.id];
                assert_eq!(n.cols, cols, "concat_rows: column mismatch");
                out.extend_from_slice(&n.value);
            }
            (out, total, cols)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        tape.push(r, c, v, Op::ConcatRows(ids), true)
    }

    /// RMS normalization per row with a learned per-column gain.
    pub fn rms_norm(&self, gain: &Tensor, eps: f64) -> Tensor {
        self.same_tape(gain);
        let (v, r, c) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let g = &nodes[gain.id];
            assert_eq!(g.rows * g.cols, a.cols, "rms_norm: gain length mismatch");
            let mut out = vec![0.0; a.value.len()];
            for i in 0..a.rows {
                let row = &a.value[i * a.cols..(i + 1) * a.cols];
                let ms = row.iter().map(|x| x * x).sum::<f64>() / a.cols as f64;
                let inv = 1.0 / (ms + eps).sqrt();
                for j in 0..a.cols {
                    out[i * a.cols + j] = row[j] * inv * g.value[j];
                }
            }
            (out, a.rows, a.cols)
        };
        self.tape.push(
            r,
            c,
            v,
            Op::RmsNorm {
                x: self.id,
                gain: gain.id,
                eps,
            },
            true,
        )
    }

    /// Returns a numeric error naming `what` if any entry is non-finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        let nodes = self.tape.nodes.borrow();
        for (i, v) in nodes[self.id].value.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at flat index {i} in {what}"
                )));
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every
    /// `requires_grad` leaf reachable from the root; repeated calls without
    /// `Tape::zero_grads` accumulate.
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.tape.nodes.borrow_mut();
        if nodes[self.id].value.len() != 1 {
            let root = &nodes[self.id];
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape [{}, {}]",
                root.rows, root.cols
            )));
        }
        // Interior adjoints are scratch state for this pass; only leaf
        // gradients accumulate across repeated backward calls.
        for node in nodes.iter_mut().take(self.id + 1) {
            if !matches!(node.op, Op::Leaf) {
                node.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        nodes[self.id].grad[0] += 1.0;
        for id in (0..=self.id).rev() {
            backward_node(&mut nodes, id);
        }
        Ok(())
    }
}

fn backward_node(nodes: &mut [Node], id: usize) {
    // Take the node's grad; ops below only touch parents (indices < id).
    let op = nodes[id].op.clone();
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let g = std::mem::take(&mut nodes[id].grad);
            axpy(&mut nodes[a].grad, &g, 1.0);
            axpy(&mut nodes[b].grad, &g, 1.0);
            nodes[id].grad = g;
        }
        Op::Sub(a, b) => {
            let g = std::mem::take(&mut nodes[id].grad);
            axpy(&mut nodes[a].grad, &g, 1.0);
            axpy(&mut nodes[b].grad, &g, -1.0);
            nodes[id].grad = g;
        }
        Op::Mul(a, b) => {
            let g = std::mem::take(&mut nodes[id].grad);
            if a == b {
                let av = std::mem::take(&mut nodes[a].value);
                for (ga, (gi, x)) in nodes[a].grad.iter_mut().zip(g.iter().zip(&av)) {
                    *ga += 2.0 * gi * x;
                }
                nodes[a].value = av;
            } else {
                let (pa, pb) = two_mut(nodes, a, b);
                for ((ga, gi), y) in pa.grad.iter_mut().zip(&g).zip(&pb.value) {
                    *ga += gi * y;
                }
                for ((gb, gi), x) in pb.grad.iter_mut().zip(&g).zip(&pa.value) {
                    *gb += gi * x;
                }
            }
            nodes[id].grad = g;
        }
        Op::Scale(a, c) => {
            let g = std::mem::take(&mut nodes[id].grad);
            axpy(&mut nodes[a].grad, &g, c);
            nodes[id].grad = g;
        }
        Op::ScalarMul(s, a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let sval = nodes[s].value[0];
            let dot: f64 = g.iter().zip(&nodes[a].value).map(|(gi, x)| gi * x).sum();
            nodes[s].grad[0] += dot;
            axpy(&mut nodes[a].grad, &g, sval);
            nodes[id].grad = g;
        }
        Op::MatMul(a, b) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (m, k, n) = (nodes[a].rows, nodes[a].cols, nodes[b].cols);
            if a == b {
                // c = a @ a (square): da = g @ a^T + a^T @ g
                let av = nodes[a].value.clone();
                matmul_nt_accum(&g, &av, &mut nodes[a].grad, m, n, k);
                matmul_tn_accum(&av, &g, &mut nodes[a].grad, m, k, n);
            } else {
                let (pa, pb) = two_mut(nodes, a, b);
                // da += g @ b^T
                matmul_nt_accum(&g, &pb.value, &mut pa.grad, m, n, k);
                // db += a^T @ g
                matmul_tn_accum(&pa.value, &g, &mut pb.grad, m, k, n);
            }
            nodes[id].grad = g;
        }
        Op::Transpose(a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            for i in 0..r {
                for j in 0..c {
                    nodes[a].grad[j * r + i] += g[i * c + j];
                }
            }
            nodes[id].grad = g;
        }
        Op::Activation(kind, a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let xv = std::mem::take(&mut nodes[a].value);
            for ((ga, gi), x) in nodes[a].grad.iter_mut().zip(&g).zip(&xv) {
                *ga += gi * kind.deriv(*x);
            }
            nodes[a].value = xv;
            nodes[id].grad = g;
        }
        Op::ActivationDeriv(kind, a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let xv = std::mem::take(&mut nodes[a].value);
            for ((ga, gi), x) in nodes[a].grad.iter_mut().zip(&g).zip(&xv) {
                *ga += gi * kind.deriv2(*x);
            }
            nodes[a].value = xv;
            nodes[id].grad = g;
        }
        Op::Sum(a) => {
            let g = nodes[id].grad[0];
            nodes[a].grad.iter_mut().for_each(|x| *x += g);
        }
        Op::SoftmaxRows(a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let y = nodes[id].value.clone();
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            for i in 0..r {
                let yi = &y[i * c..(i + 1) * c];
                let gi = &g[i * c..(i + 1) * c];
                let dot: f64 = yi.iter().zip(gi).map(|(yv, gv)| yv * gv).sum();
                for j in 0..c {
                    nodes[a].grad[i * c + j] += yi[j] * (gi[j] - dot);
                }
            }
            nodes[id].grad = g;
        }
        Op::CausalSoftmaxRows(a) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let y = nodes[id].value.clone();
            let c = nodes[id].cols;
            for i in 0..nodes[id].rows {
                let yi = &y[i * c..i * c + i + 1];
                let gi = &g[i * c..i * c + i + 1];
                let dot: f64 = yi.iter().zip(gi).map(|(yv, gv)| yv * gv).sum();
                for j in 0..=i {
                    nodes[a].grad[i * c + j] += yi[j] * (gi[j] - dot);
                }
            }
            nodes[id].grad = g;
        }
        Op::RowScale(a, s) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            let (pa, ps) = two_mut(nodes, a, s);
            for i in 0..r {
                let f = ps.value[i];
                let mut dot = 0.0;
                for j in 0..c {
                    let gi = g[i * c + j];
                    pa.grad[i * c + j] += gi * f;
                    dot += gi * pa.value[i * c + j];
                }
                ps.grad[i] += dot;
            }
            nodes[id].grad = g;
        }
        Op::AddRowVec(a, b) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            axpy(&mut nodes[a].grad, &g, 1.0);
            for i in 0..r {
                for j in 0..c {
                    nodes[b].grad[j] += g[i * c + j];
                }
            }
            nodes[id].grad = g;
        }
        Op::GatherRows(a, ids) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let c = nodes[id].cols;
            for (i, &row) in ids.iter().enumerate() {
                for j in 0..c {
                    nodes[a].grad[row * c + j] += g[i * c + j];
                }
            }
            nodes[id].grad = g;
        }
        Op::CrossEntropy(a, targets) => {
            let g = nodes[id].grad[0];
            let c = nodes[a].cols;
            let n = targets.len() as f64;
            let logits = nodes[a].value.clone();
            let mut probs = vec![0.0; c];
            for (i, &t) in targets.iter().enumerate() {
                softmax_slice(&logits[i * c..(i + 1) * c], &mut probs);
                for j in 0..c {
                    let indicator = if j == t { 1.0 } else { 0.0 };
                    nodes[a].grad[i * c + j] += g * (probs[j] - indicator) / n;
                }
            }
        }
        Op::Rope {
            input,
            pos_offset,
            base,
        } => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            let mut dg = vec![0.0; g.len()];
            rope_apply(&g, &mut dg, r, c, pos_offset, base, true);
            axpy(&mut nodes[input].grad, &dg, 1.0);
            nodes[id].grad = g;
        }
        Op::SliceCols(a, start) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            let ac = nodes[a].cols;
            for i in 0..r {
                for j in 0..c {
                    nodes[a].grad[i * ac + start + j] += g[i * c + j];
                }
            }
            nodes[id].grad = g;
        }
        Op::SliceRows(a, start) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let c = nodes[id].cols;
            for (dst, src) in nodes[a].grad[start * c..]
                .iter_mut()
                .zip(&g)
            {
                *dst += src;
            }
            nodes[id].grad = g;
        }
        Op::ConcatCols(ids) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            for i in 0..r {
                let mut off = 0;
                for &pid in &ids {
                    let pc = nodes[pid].cols;
                    for j in 0..pc {
                        nodes[pid].grad[i * pc + j] += g[i * c + off + j];
                    }
                    off += pc;
                }
            }
            nodes[id].grad = g;
        }
        Op::ConcatRows(ids) => {
            let g = std::mem::take(&mut nodes[id].grad);
            let mut off = 0;
            for &pid in &ids {
                let len = nodes[pid].grad.len();
                for (dst, src) in nodes[pid].grad.iter_mut().zip(&g[off..off + len]) {
                    *dst += src;
                }
                off += len;
            }
            nodes[id].grad = g;
        }
        Op::RmsNorm { x, gain, eps } => {
            let g = std::mem::take(&mut nodes[id].grad);
            let (r, c) = (nodes[id].rows, nodes[id].cols);
            let gainv = nodes[gain].value.clone();
            {
                let xv = nodes[x].value.clone();
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    let mut s = 0.0;
                    for j in 0..c {
                        let gi = g[i * c + j];
                        s += gi * gainv[j] * row[j];
                        nodes[gain].grad[j] += gi * row[j] * inv;
                    }
                    let inv3 = inv * inv * inv;
                    for j in 0..c {
                        nodes[x].grad[i * c + j] +=
                            g[i * c + j] * gainv[j] * inv - row[j] * s * inv3 / c as f64;
                    }
                }
            }
            nodes[id].grad = g;
        }
    }
}

fn two_mut(nodes: &mut [Node], a: usize, b: usize) -> (&mut Node, &mut Node) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// c += a @ b, with a [m x k], b [k x n].
pub fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// d += g @ b^T, with g [m x n], b [k x n], d [m x k].
fn matmul_nt_accum(g: &[f64], b: &[f64], d: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let drow = &mut d[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            drow[p] += acc;
        }
    }
}

/// d += a^T @ g, with a [m x k], g [m x n], d [k x n].
fn matmul_tn_accum(a: &[f64], g: &[f64], d: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let drow = &mut d[p * n..(p + 1) * n];
            for (dv, gv) in drow.iter_mut().zip(grow) {
                *dv += av * gv;
            }
        }
    }
}

fn softmax_slice(input: &[f64], out: &mut [f64]) {
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn rope_apply(
    input: &[f64],
    out: &mut [f64],
    rows: usize,
    cols: usize,
    pos_offset: usize,
    base: f64,
    inverse: bool,
) {
    let half = cols / 2;
    for i in 0..rows {
        let pos = (pos_offset + i) as f64;
        for p in 0..half {
            let theta = pos * base.powf(-2.0 * p as f64 / cols as f64);
            let (sin, cos) = theta.sin_cos();
            let sin = if inverse { -sin } else { sin };
            let x0 = input[i * cols + 2 * p];
            let x1 = input[i * cols + 2 * p + 1];
            out[i * cols + 2 * p] = x0 * cos - x1 * sin;
            out[i * cols + 2 * p + 1] = x0 * sin + x1 * cos;
        }
    }
}

/// Maximum relative error between autodiff and central finite differences
/// for a scalar-valued map, over all coordinates of `point`.
///
/// The error at each coordinate is |ad - fd| / max(1, |fd|). `point` must
/// stay clear of activation kinks by well more than `step`.
pub fn grad_check<F>(f: F, shape: &[usize], point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&Rc<Tape>, &Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(shape, point.to_vec(), true);
    let root = f(&tape, &leaf)?;
    if root.len() != 1 {
        return Err(Error::Contract("grad_check map must be scalar-valued".into()));
    }
    root.backward()?;
    let auto = leaf.grad();

    let eval = |pt: &[f64]| -> Result<f64> {
        let t = Tape::new();
        let l = t.leaf(shape, pt.to_vec(), false);
        let r = f(&t, &l)?;
        Ok(r.item())
    };

    let mut max_err: f64 = 0.0;
    let mut perturbed = point.to_vec();
    for i in 0..point.len() {
        perturbed[i] = point[i] + step;
        let hi = eval(&perturbed)?;
        perturbed[i] = point[i] - step;
        let lo = eval(&perturbed)?;
        perturbed[i] = point[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation while differencing coordinate {i}"
            )));
        }
        let fd = (hi - lo) / (2.0 * step);
        let err = (auto[i] - fd).abs() / fd.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity_and_hand_product() {
        let tape = Tape::new();
        let eye = tape.leaf(&[2, 2], vec![1.0, 0.0, 0.0, 1.0], false);
        let v = tape.leaf(&[2, 1], vec![3.0, 4.0], false);
        assert_eq!(eye.matmul(&v).unwrap().value(), vec![3.0, 4.0]);

        let a = tape.leaf(&[1, 2], vec![1.0, 2.0], false);
        let b = tape.leaf(&[2, 1], vec![3.0, 4.0], false);
        assert_eq!(a.matmul(&b).unwrap().value(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![0.0; 6], false);
        let b = tape.leaf(&[2, 2], vec![0.0; 4], false);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_identity_exact_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let a = tape.leaf(&[3, 3], data.clone(), false);
        let eye = tape.leaf(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], false);
        assert_eq!(eye.matmul(&a).unwrap().value(), data);
        assert_eq!(a.matmul(&eye).unwrap().value(), data);
    }

    #[test]
    fn hadamard_basics() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![1.0, 2.0, 3.0], true);
        let b = tape.leaf(&[3], vec![4.0, 5.0, 6.0], true);
        let c = a.hadamard(&b).unwrap();
        assert_eq!(c.value(), vec![4.0, 10.0, 18.0]);

        let ones = tape.leaf(&[3], vec![1.0; 3], false);
        assert_eq!(a.hadamard(&ones).unwrap().value(), a.value());

        c.sum().backward().unwrap();
        assert_eq!(a.grad(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn backward_sum_and_square() {
        let tape = Tape::new();
        let x = tape.leaf(&[4], vec![1.0, -2.0, 3.0, 0.5], true);
        x.sum().backward().unwrap();
        assert_eq!(x.grad(), vec![1.0; 4]);

        let tape = Tape::new();
        let x = tape.leaf(&[3], vec![1.0, -2.0, 3.0], true);
        x.hadamard(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0], true);
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_and_resets() {
        let tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0], true);
        let root = x.sum();
        root.backward().unwrap();
        root.backward().unwrap();
        assert_eq!(x.grad(), vec![2.0, 2.0]);
        tape.zero_grads();
        root.backward().unwrap();
        assert_eq!(x.grad(), vec![1.0, 1.0]);
    }

    #[test]
    fn backward_deterministic_across_runs() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = Tape::new();
            let ta = tape.leaf(&[3, 4], a, true);
            let tb = tape.leaf(&[4, 2], b, true);
            let c = ta
                .matmul(&tb)
                .unwrap()
                .activation(ActivationKind::Silu)
                .sum();
            c.backward().unwrap();
            (ta.grad(), tb.grad())
        };
        let (g1, g2) = run();
        let (h1, h2) = run();
        assert_eq!(g1, h1);
        assert_eq!(g2, h2);
    }

    #[test]
    fn matmul_grad_matches_ones_times_b_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let ta = tape.leaf(&[3, 4], a, true);
        let tb = tape.leaf(&[4, 2], b.clone(), false);
        ta.matmul(&tb).unwrap().sum().backward().unwrap();
        // d(sum(a@b))/da = ones(3x2) @ b^T
        let grad = ta.grad();
        for i in 0..3 {
            for p in 0..4 {
                let expect: f64 = (0..2).map(|j| b[p * 2 + j]).sum();
                assert!((grad[i * 4 + p] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_check_linear_map_is_exact() {
        let err = grad_check(
            |_tape, x| Ok(x.sum()),
            &[5],
            &[0.3, -0.4, 1.2, 2.0, -0.7],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn grad_check_composite_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let point: Vec<f64> = (0..12).map(|_| rng.gen_range(0.2..1.0)).collect();
        let err = grad_check(
            |tape, x| {
                let w = tape.leaf(&[4, 3], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect(), false);
                let y = x.matmul(&w)?;
                let s = y.activation(ActivationKind::Gelu).softmax_rows();
                Ok(s.hadamard(&y)?.sum())
            },
            &[3, 4],
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn grad_check_fused_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let point: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = grad_check(
            |tape, x| {
                let gain = tape.leaf(&[4], vec![1.1, 0.9, 1.0, 1.2], false);
                let n = x.rms_norm(&gain, 1e-6);
                let r = n.rope(3, 10000.0);
                let s = r.matmul(&r.transpose())?.causal_softmax_rows();
                Ok(s.hadamard(&n.matmul(&n.transpose())?)?.sum())
            },
            &[2, 4],
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn cross_entropy_matches_manual_and_grads() {
        let tape = Tape::new();
        let logits = tape.leaf(&[2, 3], vec![1.0, 2.0, 0.5, -1.0, 0.0, 1.5], true);
        let loss = logits.cross_entropy(&[1, 2]);
        // manual
        let rows = [[1.0, 2.0, 0.5], [-1.0, 0.0, 1.5]];
        let mut manual = 0.0;
        for (row, &t) in rows.iter().zip(&[1usize, 2usize]) {
            let lse = row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
            manual += lse - row[t];
        }
        manual /= 2.0;
        assert!((loss.item() - manual).abs() < 1e-12);

        loss.backward().unwrap();
        let g = logits.grad();
        // row sums of softmax-minus-onehot gradients are zero
        assert!((g[0] + g[1] + g[2]).abs() < 1e-12);
        assert!((g[3] + g[4] + g[5]).abs() < 1e-12);
    }

    #[test]
    fn gather_and_slices_roundtrip_grads() {
        let err = grad_check(
            |_tape, table| {
                let rowsel = table.gather_rows(&[2, 0, 2]);
                let left = rowsel.slice_cols(0, 1);
                let right = rowsel.slice_cols(1, 1);
                let cat = Tensor::concat_cols(&[right, left]);
                let top = cat.slice_rows(0, 2);
                let bottom = cat.slice_rows(2, 1);
                Ok(Tensor::concat_rows(&[bottom, top])
                    .activation(ActivationKind::Tanh)
                    .sum())
            },
            &[3, 2],
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn row_scale_and_add_row_vec_grads() {
        let err = grad_check(
            |tape, x| {
                let s = tape.leaf(&[3, 1], vec![0.5, -1.0, 2.0], false);
                let b = tape.leaf(&[1, 2], vec![0.1, -0.2], false);
                Ok(x.row_scale(&s)?.add_row_vec(&b)?.hadamard(&x)?.sum())
            },
            &[3, 2],
            &[0.3, 0.7, -0.4, 1.1, 0.9, -0.2],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }
}
