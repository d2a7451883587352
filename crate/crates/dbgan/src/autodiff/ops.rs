use std::rc::Rc;

use ndarray::{concatenate, s, Axis, Zip};

use super::{BceSpec, GramBceSpec, Matrix, Op, Result, Tape, TensorError, Var};
use crate::graph::CsrMatrix;

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (l, r) = (a.shape(), b.shape());
    if l != r {
        return Err(TensorError::ShapeMismatch { op, lhs: l, rhs: r });
    }
    Ok(())
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn unary(&self, value: Matrix, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        Ok(self.binary(&other, a.dot(&*b), Op::MatMul(self.id, other.id)))
    }

    /// `sparse · self`, with the sparse operand treated as a constant.
    pub fn left_sparse_mul(&self, sparse: &Rc<CsrMatrix>) -> Result<Var<'t>> {
        let v = self.value();
        if sparse.shape().1 != v.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "sparse matmul",
                lhs: sparse.shape(),
                rhs: v.dim(),
            });
        }
        Ok(self.unary(sparse.mul_dense(&v), Op::SpMM(Rc::clone(sparse), self.id)))
    }

    fn left_sparse_transpose_mul(&self, sparse: &Rc<CsrMatrix>) -> Result<Var<'t>> {
        let v = self.value();
        if sparse.shape().0 != v.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "sparse transpose matmul",
                lhs: sparse.shape(),
                rhs: v.dim(),
            });
        }
        Ok(self.unary(
            sparse.transpose_mul_dense(&v),
            Op::SpMMT(Rc::clone(sparse), self.id),
        ))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("add", self, &other)?;
        let v = &*self.value() + &*other.value();
        Ok(self.binary(&other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", self, &other)?;
        let v = &*self.value() - &*other.value();
        Ok(self.binary(&other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", self, &other)?;
        let v = &*self.value() * &*other.value();
        Ok(self.binary(&other, v, Op::Mul(self.id, other.id)))
    }

    /// Elementwise quotient. A zero denominator is a domain error.
    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.div_impl(other, false)
    }

    /// Elementwise quotient with `x / 0 := 0`.
    pub fn div_guarded(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.div_impl(other, true)
    }

    fn div_impl(&self, other: Var<'t>, guarded: bool) -> Result<Var<'t>> {
        same_shape("div", self, &other)?;
        let (a, b) = (self.value(), other.value());
        if !guarded && b.iter().any(|&d| d == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let v = Zip::from(&*a)
            .and(&*b)
            .map_collect(|&x, &d| if d == 0.0 { 0.0 } else { x / d });
        Ok(self.binary(
            &other,
            v,
            Op::Div {
                num: self.id,
                den: other.id,
                guarded,
            },
        ))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().mapv(|x| x * c), Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().mapv(|x| x + c), Op::AddScalar(self.id))
    }

    /// Adds the `1×k` row vector `bias` to every row of `self`.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        if b.nrows() != 1 || b.ncols() != a.ncols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let v = &*a + &*b;
        Ok(self.binary(&bias, v, Op::AddBias(self.id, bias.id)))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(self.value().mapv(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(self.value().mapv(sigmoid_scalar), Op::Sigmoid(self.id))
    }

    /// Natural log. Non-positive inputs are a domain error.
    pub fn ln(&self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain {
                op: "ln",
                detail: format!("input {bad} is not positive"),
            });
        }
        Ok(self.unary(v.mapv(f64::ln), Op::Ln(self.id)))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(self.value().mapv(|x| x * x), Op::Square(self.id))
    }

    /// Square root. Negative inputs are a domain error; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(bad) = v.iter().find(|&&x| !(x >= 0.0)) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("input {bad} is negative"),
            });
        }
        Ok(self.unary(v.mapv(f64::sqrt), Op::Sqrt(self.id)))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            self.value().mapv(|x| x.clamp(lo, hi)),
            Op::Clamp { x: self.id, lo, hi },
        )
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Matrix::from_elem((1, 1), s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a `1×1` tensor to `shape`.
    pub fn expand(&self, shape: (usize, usize)) -> Result<Var<'t>> {
        let v = self.value();
        if v.dim() != (1, 1) {
            return Err(TensorError::NonScalar(v.dim()));
        }
        Ok(self.unary(Matrix::from_elem(shape, v[[0, 0]]), Op::Expand(self.id)))
    }

    /// Column sums, `n×k → 1×k`.
    pub fn sum_rows(&self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(v, Op::SumRows(self.id))
    }

    /// Repeats a `1×k` row `n` times.
    pub fn broadcast_rows(&self, n: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.nrows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: v.dim(),
                rhs: (1, v.ncols()),
            });
        }
        let out = v.broadcast((n, v.ncols())).unwrap().to_owned();
        Ok(self.unary(out, Op::BroadcastRows(self.id)))
    }

    /// Row sums, `n×k → n×1`.
    pub fn sum_cols(&self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(v, Op::SumCols(self.id))
    }

    /// Repeats an `n×1` column `k` times.
    pub fn broadcast_cols(&self, k: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.ncols() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_cols",
                lhs: v.dim(),
                rhs: (v.nrows(), 1),
            });
        }
        let out = v.broadcast((v.nrows(), k)).unwrap().to_owned();
        Ok(self.unary(out, Op::BroadcastCols(self.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.value().t().as_standard_layout().into_owned();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn concat_rows(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.ncols() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let v = concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        Ok(self.binary(&other, v, Op::ConcatRows(self.id, other.id)))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                lhs: v.dim(),
                rhs: (start + len, v.ncols()),
            });
        }
        let out = v.slice(s![start..start + len, ..]).to_owned();
        Ok(self.unary(
            out,
            Op::SliceRows { x: self.id, start },
        ))
    }

    fn pad_rows(&self, start: usize, total: usize) -> Var<'t> {
        let v = self.value();
        let mut out = Matrix::zeros((total, v.ncols()));
        out.slice_mut(s![start..start + v.nrows(), ..]).assign(&*v);
        self.unary(
            out,
            Op::PadRows { x: self.id, start },
        )
    }

    /// Per-row Euclidean norm, `n×k → n×1`. The derivative at a zero row is taken as 0.
    pub fn row_norm(&self) -> Var<'t> {
        let v = self
            .value()
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.unary(v, Op::RowNorm(self.id))
    }

    /// Weighted binary cross-entropy of probabilities `self` against a constant
    /// `target` in `[0, 1]`, with probabilities clamped to `[eps, 1 − eps]`:
    ///
    /// `Σ [w·t·(−ln p) + (1−t)·(−ln(1−p))] / Σ [w·t + (1−t)]`
    ///
    /// First-order differentiable only.
    pub fn bce(&self, target: Rc<Matrix>, pos_weight: f64, eps: f64) -> Result<Var<'t>> {
        let p = self.value();
        if p.dim() != target.dim() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: p.dim(),
                rhs: target.dim(),
            });
        }
        if let Some(bad) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(TensorError::Domain {
                op: "bce",
                detail: format!("target {bad} outside [0, 1]"),
            });
        }
        let spec = BceSpec {
            p: self.id,
            target,
            pos_weight,
            eps,
        };
        let (mut num, mut den) = (0.0, 0.0);
        Zip::from(&*p).and(&*spec.target).for_each(|&p, &t| {
            let pc = p.clamp(eps, 1.0 - eps);
            num -= pos_weight * t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            den += pos_weight * t + (1.0 - t);
        });
        Ok(self.unary(
            Matrix::from_elem((1, 1), num / den),
            Op::Bce(Rc::new(spec)),
        ))
    }
}

/// Rows of `H Hᵀ` evaluated per block so the `n×n` score matrix never exists.
const GRAM_BLOCK: usize = 256;

impl<'t> Var<'t> {
    /// `bce(sigmoid(self · selfᵀ))` against the 0/1 matrix whose ones are the
    /// stored entries of `positives`, computed block by block in `O(n·q)` memory.
    ///
    /// First-order differentiable only.
    pub fn gram_bce(&self, positives: &CsrMatrix, pos_weight: f64, eps: f64) -> Result<Var<'t>> {
        let h = self.value();
        let n = h.nrows();
        if positives.shape() != (n, n) {
            return Err(TensorError::ShapeMismatch {
                op: "gram_bce",
                lhs: h.dim(),
                rhs: positives.shape(),
            });
        }
        let w = pos_weight;
        let mut num = 0.0;
        let mut pos = 0usize;
        let mut m_h = Matrix::zeros(h.dim());
        let mut mt_h = Matrix::zeros(h.dim());
        let mut start = 0;
        while start < n {
            let end = (start + GRAM_BLOCK).min(n);
            let hb = h.slice(s![start..end, ..]);
            // Score block, then overwritten in place by dl/ds.
            let mut blk = hb.dot(&h.t());
            for (r, mut row) in blk.rows_mut().into_iter().enumerate() {
                let raw: Vec<(usize, f64)> = positives.row(start + r).map(|(c, _)| (c, row[c])).collect();
                pos += raw.len();
                for v in row.iter_mut() {
                    let p = sigmoid_scalar(*v);
                    let pc = p.clamp(eps, 1.0 - eps);
                    num -= (1.0 - pc).ln();
                    *v = if p < eps || p > 1.0 - eps { 0.0 } else { p };
                }
                for (c, score) in raw {
                    let p = sigmoid_scalar(score);
                    let pc = p.clamp(eps, 1.0 - eps);
                    num += (1.0 - pc).ln() - w * pc.ln();
                    row[c] = if p < eps || p > 1.0 - eps { 0.0 } else { -w * (1.0 - p) };
                }
            }
            m_h.slice_mut(s![start..end, ..]).assign(&blk.dot(&*h));
            mt_h += &blk.t().dot(&hb);
            start = end;
        }
        let den = w * pos as f64 + (n * n - pos) as f64;
        let grad = (m_h + mt_h) / den;
        Ok(self.unary(
            Matrix::from_elem((1, 1), num / den),
            Op::GramBce(Rc::new(GramBceSpec { h: self.id, grad })),
        ))
    }
}

fn bce_grad_value(spec: &BceSpec, p: &Matrix, scale: f64) -> Matrix {
    let (w, eps) = (spec.pos_weight, spec.eps);
    let den: f64 = spec.target.iter().map(|&t| w * t + (1.0 - t)).sum();
    Zip::from(p).and(&*spec.target).map_collect(|&p, &t| {
        if p < eps || p > 1.0 - eps {
            0.0
        } else {
            scale * (-w * t / p + (1.0 - t) / (1.0 - p)) / den
        }
    })
}

fn mask_value(x: &Matrix, g: &Matrix, keep: impl Fn(f64) -> bool) -> Matrix {
    Zip::from(x)
        .and(g)
        .map_collect(|&x, &g| if keep(x) { g } else { 0.0 })
}

fn relu_mask<'t>(tape: &'t Tape, x: usize, g: Var<'t>) -> Var<'t> {
    let v = mask_value(&tape.value_of(x), &g.value(), |x| x > 0.0);
    tape.push(v, Op::ReluMask { x, g: g.id }, g.requires_grad())
}

fn clamp_mask<'t>(tape: &'t Tape, x: usize, g: Var<'t>, lo: f64, hi: f64) -> Var<'t> {
    let v = mask_value(&tape.value_of(x), &g.value(), |x| x >= lo && x <= hi);
    tape.push(v, Op::ClampMask { x, g: g.id, lo, hi }, g.requires_grad())
}

fn sigmoid_grad<'t>(tape: &'t Tape, s: usize, g: Var<'t>) -> Var<'t> {
    let v = Zip::from(&*tape.value_of(s))
        .and(&*g.value())
        .map_collect(|&s, &g| g * s * (1.0 - s));
    let rg = tape.requires(s) || g.requires_grad();
    tape.push(v, Op::SigmoidGrad { s, g: g.id }, rg)
}

fn bce_grad<'t>(tape: &'t Tape, spec: &Rc<BceSpec>, g: Option<Var<'t>>) -> Var<'t> {
    let scale = g.map_or(1.0, |g| g.item());
    let v = bce_grad_value(spec, &tape.value_of(spec.p), scale);
    let rg = tape.requires(spec.p) || g.is_some_and(|g| g.requires_grad());
    tape.push(
        v,
        Op::BceGrad {
            spec: Rc::clone(spec),
            g: g.map(|g| g.id),
        },
        rg,
    )
}

/// Contributions of upstream gradient `g` (for node `id`) to each input of that node.
pub(super) fn pullback<'t>(
    tape: &'t Tape,
    id: usize,
    g: Var<'t>,
) -> Result<Vec<(usize, Var<'t>)>> {
    let need = |i: usize| tape.requires(i);
    let v = |i: usize| tape.var(i);
    let mut out = Vec::with_capacity(2);
    match tape.op_of(id) {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if need(a) {
                out.push((a, g.matmul(v(b).transpose())?));
            }
            if need(b) {
                out.push((b, v(a).transpose().matmul(g)?));
            }
        }
        Op::SpMM(sp, x) => out.push((x, g.left_sparse_transpose_mul(&sp)?)),
        Op::SpMMT(sp, x) => out.push((x, g.left_sparse_mul(&sp)?)),
        Op::Add(a, b) => {
            out.push((a, g));
            out.push((b, g));
        }
        Op::Sub(a, b) => {
            out.push((a, g));
            if need(b) {
                out.push((b, g.neg()));
            }
        }
        Op::Mul(a, b) => {
            if need(a) {
                out.push((a, g.mul(v(b))?));
            }
            if need(b) {
                out.push((b, g.mul(v(a))?));
            }
        }
        Op::Div { num, den, guarded } => {
            if need(num) {
                out.push((num, g.div_impl(v(den), guarded)?));
            }
            if need(den) {
                // d(a/b)/db = −(a/b)/b
                let q = v(id);
                out.push((den, g.mul(q)?.div_impl(v(den), guarded)?.neg()));
            }
        }
        Op::Scale(a, c) => out.push((a, g.scale(c))),
        Op::AddScalar(a) => out.push((a, g)),
        Op::AddBias(a, b) => {
            out.push((a, g));
            if need(b) {
                out.push((b, g.sum_rows()));
            }
        }
        Op::Relu(x) => out.push((x, relu_mask(tape, x, g))),
        Op::ReluMask { x, g: up } => {
            if need(up) {
                out.push((up, relu_mask(tape, x, g)));
            }
        }
        Op::Sigmoid(x) => out.push((x, sigmoid_grad(tape, id, g))),
        Op::SigmoidGrad { s, g: up } => {
            if need(up) {
                out.push((up, sigmoid_grad(tape, s, g)));
            }
            if need(s) {
                // ∂(u·s(1−s))/∂s = u(1 − 2s)
                let d = v(s).scale(-2.0).add_scalar(1.0);
                out.push((s, g.mul(v(up))?.mul(d)?));
            }
        }
        Op::Ln(x) => out.push((x, g.div(v(x))?)),
        Op::Square(x) => out.push((x, g.mul(v(x).scale(2.0))?)),
        Op::Sqrt(x) => out.push((x, g.scale(0.5).div_guarded(v(id))?)),
        Op::Clamp { x, lo, hi } => out.push((x, clamp_mask(tape, x, g, lo, hi))),
        Op::ClampMask { x, g: up, lo, hi } => {
            if need(up) {
                out.push((up, clamp_mask(tape, x, g, lo, hi)));
            }
        }
        Op::Sum(x) => {
            let shape = v(x).shape();
            out.push((x, g.expand(shape)?));
        }
        Op::Expand(x) => out.push((x, g.sum())),
        Op::SumRows(x) => {
            let n = v(x).shape().0;
            out.push((x, g.broadcast_rows(n)?));
        }
        Op::BroadcastRows(x) => out.push((x, g.sum_rows())),
        Op::SumCols(x) => {
            let k = v(x).shape().1;
            out.push((x, g.broadcast_cols(k)?));
        }
        Op::BroadcastCols(x) => out.push((x, g.sum_cols())),
        Op::Transpose(x) => out.push((x, g.transpose())),
        Op::ConcatRows(a, b) => {
            let ra = v(a).shape().0;
            let rb = v(b).shape().0;
            if need(a) {
                out.push((a, g.slice_rows(0, ra)?));
            }
            if need(b) {
                out.push((b, g.slice_rows(ra, rb)?));
            }
        }
        Op::SliceRows { x, start } => {
            let total = v(x).shape().0;
            out.push((x, g.pad_rows(start, total)));
        }
        Op::PadRows { x, start } => {
            let len = v(x).shape().0;
            out.push((x, g.slice_rows(start, len)?));
        }
        Op::RowNorm(x) => {
            let k = v(x).shape().1;
            let coef = g.div_guarded(v(id))?.broadcast_cols(k)?;
            out.push((x, coef.mul(v(x))?));
        }
        Op::Bce(spec) => out.push((spec.p, bce_grad(tape, &spec, Some(g)))),
        Op::BceGrad { spec, g: up } => {
            if need(spec.p) {
                return Err(TensorError::Unsupported(
                    "second derivative of bce with respect to its probabilities",
                ));
            }
            if let Some(up) = up.filter(|&u| need(u)) {
                let unit = bce_grad(tape, &spec, None);
                out.push((up, g.mul(unit)?.sum()));
            }
        }
        Op::GramBce(spec) => {
            let value = &spec.grad * g.item();
            let rg = g.requires_grad() || need(spec.h);
            let node = tape.push(value, Op::GramBceGrad { spec: Rc::clone(&spec), g: g.id }, rg);
            out.push((spec.h, node));
        }
        Op::GramBceGrad { spec, g: up } => {
            if need(spec.h) {
                return Err(TensorError::Unsupported(
                    "second derivative of gram_bce with respect to its embeddings",
                ));
            }
            if need(up) {
                let unit = tape.constant(spec.grad.clone());
                out.push((up, g.mul(unit)?.sum()));
            }
        }
    }
    Ok(out)
}
