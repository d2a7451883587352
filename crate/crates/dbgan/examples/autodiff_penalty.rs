//! Reverse-mode differentiation on a small MLP critic: gradients against
//! central differences, then the gradient penalty through double backprop.

use dbgan::autodiff::{finite_difference_check, Matrix, Tape, Var};
use ndarray::array;

fn critic<'t>(x: Var<'t>, w1: Var<'t>, w2: Var<'t>) -> dbgan::autodiff::Result<Var<'t>> {
    x.matmul(w1)?.relu().matmul(w2)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x0: Matrix = array![[0.3, -1.2, 0.5], [1.1, 0.4, -0.7]];
    let w1: Matrix = array![[0.2, -0.5, 0.1, 0.9], [0.7, 0.3, -0.4, 0.2], [-0.6, 0.8, 0.5, -0.1]];
    let w2: Matrix = array![[1.0], [-0.5], [0.25], [0.75]];

    let tape = Tape::new();
    let (x, a, b) = (tape.param(x0.clone()), tape.param(w1.clone()), tape.param(w2.clone()));
    let out = critic(x, a, b)?.mean();
    let grads = tape.backward(out)?;
    println!("mean D(x) = {:.6}", out.item());
    println!("dL/dx =\n{:.4}", grads.get(x).unwrap());

    let err = finite_difference_check(
        |t, x| critic(x, t.constant(w1.clone()), t.constant(w2.clone())).map(|v| v.mean()),
        &x0,
        1e-6,
    )?;
    println!("max relative error vs central differences: {err:.2e}");

    // Penalty (‖∇ₓD(x)‖ − 1)² averaged over rows, differentiated w.r.t. the weights.
    let tape = Tape::new();
    let (x, a, b) = (tape.param(x0.clone()), tape.param(w1.clone()), tape.param(w2.clone()));
    let d = critic(x, a, b)?.sum();
    let gx = tape.input_gradient(d, x)?;
    let penalty = gx.row_norm().add_scalar(-1.0).square().mean();
    let g = tape.backward(penalty)?;
    println!("gradient penalty = {:.6}", penalty.item());
    println!("dGP/dW2 = {:.4}", g.get(b).unwrap().t());
    Ok(())
}
