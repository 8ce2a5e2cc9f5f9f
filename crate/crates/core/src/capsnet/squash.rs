use crate::tensor::{Scalar, Var};

/// Squashing nonlinearity over the last axis:
/// `v = ‖s‖² / (1 + ‖s‖²) · s / ‖s‖`, with `v = 0` for `s = 0`.
pub fn squash<'t, T: Scalar>(s: Var<'t, T>) -> Var<'t, T> {
    let x = s.value();
    let d = *x.shape().last().expect("non-empty shape");
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(d) {
        let factor = squash_factor(norm(row));
        out.extend(row.iter().map(|&v| T::from_f64_lossy(v.as_f64() * factor)));
    }
    let value = crate::tensor::Tensor::new(x.shape(), out).expect("same shape as input");
    s.tape().op(value, &[s], move |g, _| {
        // v = f(n)·s with f(n) = n/(1+n²):
        // ds = f·dv + (f'(n)/n)·(s·dv)·s, f'(n) = (1−n²)/(1+n²)²
        let mut ds = Vec::with_capacity(x.numel());
        for (row, grow) in x.data().chunks(d).zip(g.chunks(d)) {
            let n = norm(row);
            if n == 0.0 {
                ds.extend(std::iter::repeat(T::zero()).take(d));
                continue;
            }
            let n2 = n * n;
            let f = squash_factor(n);
            let df_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
            let dot: f64 = row.iter().zip(grow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            ds.extend(
                row.iter()
                    .zip(grow)
                    .map(|(&sv, &gv)| T::from_f64_lossy(f * gv.as_f64() + df_over_n * dot * sv.as_f64())),
            );
        }
        vec![Some(ds)]
    })
}

/// Squash of a single vector.
pub fn squash_vector(s: &[f64]) -> Vec<f64> {
    let factor = squash_factor(s.iter().map(|v| v * v).sum::<f64>().sqrt());
    s.iter().map(|v| v * factor).collect()
}

fn norm<T: Scalar>(row: &[T]) -> f64 {
    row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
}

/// `‖s‖/(1+‖s‖²)`: the factor that maps `s` to its squashed vector.
fn squash_factor(n: f64) -> f64 {
    n / (1.0 + n * n)
}
