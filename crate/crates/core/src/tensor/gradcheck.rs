use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Elementwise relative discrepancy `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is (near) zero from turning
/// rounding noise into a huge relative error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Central finite-difference gradient of a scalar function of `x`.
pub fn finite_difference_gradient<F>(f: &F, x: &Tensor<f64>, h: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(probe);
        Ok(f(&tape, v)?.item())
    };
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        out.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences with step `h`; returns the worst [`relative_error`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let mut leaf = x.clone();
    leaf.set_requires_grad(true);
    let xv = tape.leaf(leaf);
    let y = f(&tape, xv)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get_or_zeros(xv);
    let numeric = finite_difference_gradient(&f, x, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
