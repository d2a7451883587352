//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; scalars are `1×1`. Operations are recorded on a
//! [`Tape`] and differentiated by a reverse sweep. The sweep itself is expressed in
//! tape operations, so a gradient obtained from [`Tape::grad`] is an ordinary
//! [`Var`] that can be fed into further computation and differentiated again.
//! That is what the gradient penalty of a Wasserstein critic needs.

mod check;
mod ops;

pub use check::{finite_difference_check, finite_difference_gradient};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use ndarray::Array2;
use thiserror::Error;

use crate::graph::CsrMatrix;

pub type Matrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("expected a scalar (1x1) tensor, got {0:?}")]
    NonScalar((usize, usize)),
    #[error("tensor {0} is not an ancestor of the differentiated output")]
    NotAncestor(usize),
    #[error("{0}")]
    Unsupported(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM(Rc<CsrMatrix>, usize),
    SpMMT(Rc<CsrMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Elementwise division; `guarded` maps a zero denominator to a zero result.
    Div { num: usize, den: usize, guarded: bool },
    Scale(usize, f64),
    AddScalar(usize),
    AddBias(usize, usize),
    Relu(usize),
    /// `g ⊙ 1[x > 0]`, the relu pullback. Differentiable in `g` only.
    ReluMask { x: usize, g: usize },
    Sigmoid(usize),
    /// `g ⊙ s ⊙ (1 − s)` for a sigmoid output `s`.
    SigmoidGrad { s: usize, g: usize },
    Ln(usize),
    Square(usize),
    Sqrt(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    /// `g ⊙ 1[lo ≤ x ≤ hi]`, the clamp pullback. Differentiable in `g` only.
    ClampMask { x: usize, g: usize, lo: f64, hi: f64 },
    Sum(usize),
    Expand(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    Transpose(usize),
    ConcatRows(usize, usize),
    SliceRows { x: usize, start: usize },
    PadRows { x: usize, start: usize },
    RowNorm(usize),
    Bce(Rc<BceSpec>),
    BceGrad { spec: Rc<BceSpec>, g: Option<usize> },
    GramBce(Rc<GramBceSpec>),
    GramBceGrad { spec: Rc<GramBceSpec>, g: usize },
}

/// Weighted, clamped binary cross-entropy against a constant target.
pub(crate) struct BceSpec {
    pub p: usize,
    pub target: Rc<Matrix>,
    pub pos_weight: f64,
    pub eps: f64,
}

/// Weighted BCE of `sigmoid(H Hᵀ)` against a sparse binary pattern. The
/// gradient with respect to `H` is computed alongside the value.
pub(crate) struct GramBceSpec {
    pub h: usize,
    pub grad: Matrix,
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Records a differentiation graph. Single-threaded by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar with respect to the `requires_grad` leaves it depends on.
#[derive(Debug, Default, Clone)]
pub struct GradientMap {
    grads: BTreeMap<usize, Matrix>,
}

impl GradientMap {
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(&v.id)
    }

    /// Gradient for `v`, or zeros of `v`'s shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(v.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
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
        self.len() == 0
    }

    /// A leaf that gradients are computed for.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as data.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    pub(crate) fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn op_of(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    /// Gradients of scalar `output` with respect to `wrt`, recorded on the tape.
    ///
    /// The returned variables are differentiable: they depend on the same
    /// `requires_grad` leaves as the forward computation did.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let adjoints = self.reverse_sweep(output)?;
        wrt.iter()
            .map(|v| adjoints[v.id].ok_or(TensorError::NotAncestor(v.id)))
            .collect()
    }

    /// `∂output/∂input` as a differentiable tensor.
    pub fn input_gradient<'t>(&'t self, output: Var<'t>, input: Var<'t>) -> Result<Var<'t>> {
        if input.id > output.id || !self.requires(input.id) {
            return Err(TensorError::NotAncestor(input.id));
        }
        Ok(self.grad(output, &[input])?[0])
    }

    /// Gradients of scalar `loss` for every `requires_grad` leaf it reaches.
    pub fn backward(&self, loss: Var<'_>) -> Result<GradientMap> {
        let adjoints = self.reverse_sweep(loss)?;
        let nodes = self.nodes.borrow();
        let mut grads = BTreeMap::new();
        for (id, adj) in adjoints.iter().enumerate() {
            if let (Some(a), Op::Leaf) = (adj, &nodes[id].op) {
                if nodes[id].requires_grad {
                    grads.insert(id, (*nodes[a.id].value).clone());
                }
            }
        }
        Ok(GradientMap { grads })
    }

    fn reverse_sweep<'t>(&'t self, output: Var<'t>) -> Result<Vec<Option<Var<'t>>>> {
        let shape = output.shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalar(shape));
        }
        let mut adjoints: Vec<Option<Var<'t>>> = vec![None; output.id + 1];
        if !self.requires(output.id) {
            return Ok(adjoints);
        }
        adjoints[output.id] = Some(self.scalar(1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = adjoints[id] else { continue };
            if !self.requires(id) {
                continue;
            }
            for (input, contrib) in ops::pullback(self, id, g)? {
                if !self.requires(input) {
                    continue;
                }
                adjoints[input] = Some(match adjoints[input] {
                    Some(acc) => acc.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(adjoints)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar tensor");
        v[[0, 0]]
    }

    /// Copy of the value as a new constant leaf: cuts the differentiation graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }
}
