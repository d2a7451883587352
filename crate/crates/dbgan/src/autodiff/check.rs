use super::{Matrix, Result, Tape, TensorError, Var};

/// Central-difference gradient of a scalar function of one matrix argument.
pub fn finite_difference_gradient<F>(f: F, x: &Matrix, step: f64) -> Result<Matrix>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let eval = |m: Matrix| -> Result<f64> {
        let tape = Tape::new();
        let out = f(&tape, tape.param(m))?;
        match out.shape() {
            (1, 1) => Ok(out.item()),
            s => Err(TensorError::NonScalar(s)),
        }
    };
    let mut grad = Matrix::zeros(x.dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let mut plus = x.clone();
        plus[idx] += step;
        let mut minus = x.clone();
        minus[idx] -= step;
        *g = (eval(plus)? - eval(minus)?) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error between [`Tape::backward`] and central
/// differences: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<F>(f: F, x: &Matrix, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&tape, xv)?;
    let analytic = tape.backward(out)?.get_or_zeros(xv);
    let numeric = finite_difference_gradient(&f, x, step)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub(crate) fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
