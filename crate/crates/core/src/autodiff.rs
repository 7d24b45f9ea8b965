//! Tape-based reverse-mode automatic differentiation over [`DenseMatrix`]
//! values.
//!
//! A [`Tape`] records every operation as a node holding its forward value
//! and the ids of its parents. Parents always precede children, so
//! [`Tape::backward`] is a single reverse sweep over the node list.
//! Shapes are checked when an operation is recorded; there is no
//! broadcasting, use [`Var::replicate_rows`] to add a bias row to a batch.
//!
//! ```
//! use lpvss::autodiff::Tape;
//! use lpvss::linalg::DenseMatrix;
//!
//! let tape = Tape::new();
//! let w = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
//! let loss = w.sum();
//! let grads = tape.backward(loss);
//! assert_eq!(grads.wrt(w), DenseMatrix::filled(2, 2, 1.0));
//! ```

use std::cell::{Ref, RefCell};

use thiserror::Error;

use crate::linalg::{lu_factor, DenseMatrix, LinalgError, LuFactors};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Relu(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Sum(usize),
    Slice { src: usize, r0: usize, c0: usize },
    HCat(Vec<usize>),
    VCat(Vec<usize>),
    Reshape(usize),
    DiagFromVec(usize),
    ReplicateRows(usize),
    // The factorization is kept so the adjoint solve reuses it.
    Solve { a: usize, b: usize, lu: Box<LuFactors> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    rows: usize,
    cols: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({}x{})", self.id, self.rows, self.cols)
    }
}

/// Adjoints for every node of a tape after one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` did not influence
    /// the loss.
    pub fn wrt(&self, var: Var<'_>) -> DenseMatrix {
        self.by_id(var.id)
    }

    pub fn by_id(&self, id: usize) -> DenseMatrix {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op, value: DenseMatrix) -> Var<'_> {
        let (rows, cols) = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id,
            rows,
            cols,
        }
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&self, value: DenseMatrix) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(DenseMatrix::filled(1, 1, value))
    }

    pub fn identity(&self, n: usize) -> Var<'_> {
        self.leaf(DenseMatrix::identity(n))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'_> {
        self.leaf(DenseMatrix::zeros(rows, cols))
    }

    pub fn value(&self, var: Var<'_>) -> Ref<'_, DenseMatrix> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        assert_eq!((loss.rows, loss.cols), (1, 1), "backward needs a scalar loss");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(DenseMatrix::filled(1, 1, 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g.hadamard(&nodes[*b].value));
                    accumulate(&mut grads, *b, &g.hadamard(&nodes[*a].value));
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, &g.matmul_t(&nodes[*b].value));
                    accumulate(&mut grads, *b, &nodes[*a].value.t_matmul(&g));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, &g.transpose()),
                Op::Exp(a) => accumulate(&mut grads, *a, &g.hadamard(&node.value)),
                Op::Relu(a) => {
                    // Subgradient 0 at the kink.
                    let mask = nodes[*a].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g.hadamard(&mask));
                }
                Op::Sigmoid(a) => {
                    let local = node.value.map(|s| s * (1.0 - s));
                    accumulate(&mut grads, *a, &g.hadamard(&local));
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, &g.scale(*s)),
                Op::ScaleBy(a, s) => {
                    let sv = nodes[*s].value[(0, 0)];
                    accumulate(&mut grads, *a, &g.scale(sv));
                    let ds = g.hadamard(&nodes[*a].value).sum();
                    accumulate(&mut grads, *s, &DenseMatrix::filled(1, 1, ds));
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    accumulate(&mut grads, *a, &DenseMatrix::filled(r, c, g[(0, 0)]));
                }
                Op::Slice { src, r0, c0 } => {
                    let slot = grads[*src].get_or_insert_with(|| {
                        let (r, c) = nodes[*src].value.shape();
                        DenseMatrix::zeros(r, c)
                    });
                    slot.add_block(*r0, *c0, &g);
                }
                Op::HCat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let (r, c) = nodes[p].value.shape();
                        accumulate(&mut grads, p, &g.block(0, c0, r, c));
                        c0 += c;
                    }
                }
                Op::VCat(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let (r, c) = nodes[p].value.shape();
                        accumulate(&mut grads, p, &g.block(r0, 0, r, c));
                        r0 += r;
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let back = DenseMatrix::from_col_major(r, c, &g.vec_col_major());
                    accumulate(&mut grads, *a, &back);
                }
                Op::DiagFromVec(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let diag: Vec<f64> = (0..g.rows()).map(|i| g[(i, i)]).collect();
                    accumulate(&mut grads, *a, &DenseMatrix::from_col_major(r, c, &diag));
                }
                Op::ReplicateRows(a) => {
                    let cols = g.cols();
                    let mut row = DenseMatrix::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (acc, v) in row.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *a, &row);
                }
                Op::Solve { a, b, lu } => {
                    let (grad_a, grad_b) = linear_solve_adjoint(lu, &node.value, &g);
                    accumulate(&mut grads, *a, &grad_a);
                    accumulate(&mut grads, *b, &grad_b);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], id: usize, g: &DenseMatrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

/// Adjoint of `X = A⁻¹B`: `gradB = A⁻ᵀ·grad_out`, `gradA = −gradB·Xᵀ`.
pub fn linear_solve_adjoint(
    lu: &LuFactors,
    x: &DenseMatrix,
    grad_out: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    let grad_b = lu.solve_transposed(grad_out);
    let grad_a = grad_b.matmul_t(x).scale(-1.0);
    (grad_a, grad_b)
}

macro_rules! check_same_shape {
    ($op:expr, $a:expr, $b:expr) => {
        if ($a.rows, $a.cols) != ($b.rows, $b.cols) {
            panic!(
                "{}",
                AutodiffError::ShapeMismatch {
                    op: $op,
                    lhs: ($a.rows, $a.cols),
                    rhs: ($b.rows, $b.cols),
                }
            );
        }
    };
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> DenseMatrix {
        self.tape.value(*self).clone()
    }

    /// Value of a 1×1 variable.
    pub fn scalar_value(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1));
        self.tape.value(*self)[(0, 0)]
    }

    fn unary(self, op: Op, f: impl FnOnce(&DenseMatrix) -> DenseMatrix) -> Var<'t> {
        let value = f(&self.tape.value(self));
        self.tape.push(op, value)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl FnOnce(&DenseMatrix, &DenseMatrix) -> DenseMatrix) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "operands live on different tapes");
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        self.tape.push(op, value)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        check_same_shape!("add", self, other);
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        check_same_shape!("sub", self, other);
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        check_same_shape!("mul", self, other);
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.hadamard(b))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        if self.cols != other.rows {
            panic!(
                "{}",
                AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: self.shape(),
                    rhs: other.shape(),
                }
            );
        }
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.scale(s))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Multiplies every entry by the 1×1 variable `s`.
    pub fn scale_by(self, s: Var<'t>) -> Var<'t> {
        assert_eq!(s.shape(), (1, 1), "scale_by needs a 1x1 factor");
        self.binary(s, Op::ScaleBy(self.id, s.id), |a, s| a.scale(s[(0, 0)]))
    }

    /// Sum of all entries as a 1×1 variable.
    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| DenseMatrix::filled(1, 1, a.sum()))
    }

    pub fn square_sum(self) -> Var<'t> {
        self.mul(self).sum()
    }

    pub fn slice(self, r0: usize, c0: usize, rows: usize, cols: usize) -> Var<'t> {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "slice {r0}+{rows} x {c0}+{cols} out of range for {:?}",
            self.shape()
        );
        self.unary(Op::Slice { src: self.id, r0, c0 }, |a| a.block(r0, c0, rows, cols))
    }

    pub fn row(self, r: usize) -> Var<'t> {
        self.slice(r, 0, 1, self.cols)
    }

    pub fn hcat(parts: &[Var<'t>]) -> Var<'t> {
        let first = parts.first().expect("hcat of nothing");
        for p in parts {
            if p.rows != first.rows {
                panic!(
                    "{}",
                    AutodiffError::ShapeMismatch {
                        op: "hcat",
                        lhs: first.shape(),
                        rhs: p.shape(),
                    }
                );
            }
        }
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&DenseMatrix> = parts.iter().map(|p| &nodes[p.id].value).collect();
            DenseMatrix::hstack(&vals)
        };
        tape.push(Op::HCat(parts.iter().map(|p| p.id).collect()), value)
    }

    pub fn vcat(parts: &[Var<'t>]) -> Var<'t> {
        let first = parts.first().expect("vcat of nothing");
        for p in parts {
            if p.cols != first.cols {
                panic!(
                    "{}",
                    AutodiffError::ShapeMismatch {
                        op: "vcat",
                        lhs: first.shape(),
                        rhs: p.shape(),
                    }
                );
            }
        }
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&DenseMatrix> = parts.iter().map(|p| &nodes[p.id].value).collect();
            DenseMatrix::vstack(&vals)
        };
        tape.push(Op::VCat(parts.iter().map(|p| p.id).collect()), value)
    }

    /// Reinterprets the column-major vectorization as a `rows × cols`
    /// matrix.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(rows * cols, self.rows * self.cols, "reshape changes the element count");
        self.unary(Op::Reshape(self.id), |a| DenseMatrix::from_col_major(rows, cols, &a.vec_col_major()))
    }

    /// Diagonal matrix from a row or column vector.
    pub fn diag(self) -> Var<'t> {
        assert!(self.rows == 1 || self.cols == 1, "diag needs a vector");
        self.unary(Op::DiagFromVec(self.id), |a| DenseMatrix::diag(a.as_slice()))
    }

    /// Stacks `n` copies of a 1×k row.
    pub fn replicate_rows(self, n: usize) -> Var<'t> {
        assert_eq!(self.rows, 1, "replicate_rows needs a single row");
        self.unary(Op::ReplicateRows(self.id), |a| {
            DenseMatrix::from_fn(n, a.cols(), |_, c| a[(0, c)])
        })
    }

    /// `self⁻¹ · rhs`.
    pub fn solve(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        if !(self.rows == self.cols && rhs.rows == self.rows) {
            return Err(AutodiffError::ShapeMismatch {
                op: "solve",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (lu, x) = {
            let nodes = self.tape.nodes.borrow();
            let lu = lu_factor(&nodes[self.id].value)?;
            let x = lu.solve(&nodes[rhs.id].value);
            (lu, x)
        };
        Ok(self.tape.push(
            Op::Solve {
                a: self.id,
                b: rhs.id,
                lu: Box::new(lu),
            },
            x,
        ))
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

/// Deterministic pairwise sum of gradient lists of identical layout.
///
/// The reduction tree depends only on the number of inputs, so the result
/// is bitwise reproducible no matter how the inputs were produced.
pub fn pairwise_sum(mut items: Vec<Vec<DenseMatrix>>) -> Option<Vec<DenseMatrix>> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(mut a) = iter.next() {
            if let Some(b) = iter.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.add_assign(y);
                }
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}
