//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::{sum_f64, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dim(op, a, b))
    }
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("op produced consistent shape")
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Copies `data` (with `shape`) into the axis order `axes`.
fn permute_data<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary<F, G>(self, forward: F, derivative: G) -> Var<'t, T>
    where
        F: Fn(T) -> T,
        G: Fn(T, T) -> T + 'static,
    {
        let x = self.value();
        let out: Vec<T> = x.data().iter().map(|&v| forward(v)).collect();
        let y = Rc::new(tensor(x.shape(), out));
        let y_saved = Rc::clone(&y);
        let value = (*y).clone();
        self.tape().op(value, &[self], move |g, _| {
            // derivative(x, y) evaluated elementwise
            let grad = g
                .iter()
                .zip(x.data())
                .zip(y_saved.data())
                .map(|((&g, &xv), &yv)| g * derivative(xv, yv))
                .collect();
            vec![Some(grad)]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn square(self) -> Var<'t, T> {
        let two = T::one() + T::one();
        self.unary(|v| v * v, move |x, _| two * x)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t, T> {
        let a = T::from_f64_lossy(scale);
        let b = T::from_f64_lossy(shift);
        self.unary(move |v| a * v + b, move |_, _| a)
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        self.affine(factor, 0.0)
    }

    fn binary<F, GA, GB>(self, other: Var<'t, T>, op: &'static str, f: F, ga: GA, gb: GB) -> Result<Var<'t, T>>
    where
        F: Fn(T, T) -> T,
        GA: Fn(T, T) -> T + 'static,
        GB: Fn(T, T) -> T + 'static,
    {
        let a = self.value();
        let b = other.value();
        same_shape(op, a.shape(), b.shape())?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = tensor(a.shape(), out);
        Ok(self.tape().op(value, &[self, other], move |g, need| {
            let grad_for = |d: &dyn Fn(T, T) -> T| -> Vec<T> {
                g.iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&g, (&x, &y))| g * d(x, y))
                    .collect()
            };
            vec![
                need[0].then(|| grad_for(&ga)),
                need[1].then(|| grad_for(&gb)),
            ]
        }))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Adds `bias` (shape `[n]`) to every length-`n` row of the last axis.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let b = bias.value();
        let n = *x.shape().last().expect("non-empty shape");
        if b.shape() != [n] {
            return Err(Error::dim("add_bias", x.shape(), b.shape()));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o = *o + bv);
        }
        let value = tensor(x.shape(), out);
        Ok(self.tape().op(value, &[self, bias], move |g, need| {
            let gb = need[1].then(|| {
                let mut acc = vec![0.0f64; n];
                for row in g.chunks(n) {
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v.as_f64());
                }
                acc.into_iter().map(T::from_f64_lossy).collect()
            });
            vec![need[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let n = x.numel();
        let value = Tensor::scalar(T::from_f64_lossy(sum_f64(x.data())));
        self.tape()
            .op(value, &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Mean squared difference between two same-shape tensors, shape `[1]`.
    pub fn mse(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.sub(target)?.square().mean())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let numel: usize = shape.iter().product();
        if numel != x.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("reshape", x.shape(), shape));
        }
        let value = tensor(shape, x.data().to_vec());
        Ok(self
            .tape()
            .op(value, &[self], move |g, _| vec![Some(g.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let nd = x.ndim();
        let mut seen = vec![false; nd];
        let valid = axes.len() == nd
            && axes.iter().all(|&a| a < nd && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::dim("permute", x.shape(), axes));
        }
        let (out_shape, out) = permute_data(x.data(), x.shape(), axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let value = tensor(&out_shape, out);
        Ok(self.tape().op(value, &[self], move |g, _| {
            vec![Some(permute_data(g, &out_shape, &inverse).1)]
        }))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = bmm_forward(1, m, k, n, a.data(), b.data());
        let value = tensor(&[m, n], out);
        Ok(self.tape().op(value, &[self, other], move |g, need| {
            bmm_backward(1, m, k, n, a.data(), b.data(), g, need)
        }))
    }

    /// Batched matrix product of `[B×m×k]` and `[B×k×n]`.
    pub fn bmm(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("bmm", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let out = bmm_forward(batch, m, k, n, a.data(), b.data());
        let value = tensor(&[batch, m, n], out);
        Ok(self.tape().op(value, &[self, other], move |g, need| {
            bmm_backward(batch, m, k, n, a.data(), b.data(), g, need)
        }))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Domain(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut y = vec![T::zero(); x.numel()];
        let src = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..len)
                    .map(|j| src[at(j)].as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0f64;
                for j in 0..len {
                    total += (src[at(j)].as_f64() - max).exp();
                }
                for j in 0..len {
                    y[at(j)] = T::from_f64_lossy((src[at(j)].as_f64() - max).exp() / total);
                }
            }
        }
        let y = Rc::new(tensor(&shape, y));
        let saved = Rc::clone(&y);
        Ok(self.tape().op((*y).clone(), &[self], move |g, _| {
            let y = saved.data();
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len)
                        .map(|j| (y[base + j * inner] * g[base + j * inner]).as_f64())
                        .sum();
                    let dot = T::from_f64_lossy(dot);
                    for j in 0..len {
                        let at = base + j * inner;
                        dx[at] = y[at] * (g[at] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Euclidean norm over the last axis. The output drops that axis (a
    /// 1-D input yields shape `[1]`). The gradient at a zero vector is zero.
    pub fn norm_last(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape();
        let d = *shape.last().expect("non-empty shape");
        let out_shape: Vec<usize> = if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        };
        let norms: Vec<f64> = x
            .data()
            .chunks(d)
            .map(|row| row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
            .collect();
        let value = tensor(&out_shape, norms.iter().map(|&n| T::from_f64_lossy(n)).collect());
        self.tape().op(value, &[self], move |g, _| {
            let mut dx = Vec::with_capacity(x.numel());
            for ((row, &n), &gn) in x.data().chunks(d).zip(&norms).zip(g) {
                if n > 0.0 {
                    let factor = gn.as_f64() / n;
                    dx.extend(row.iter().map(|&v| T::from_f64_lossy(v.as_f64() * factor)));
                } else {
                    dx.extend(std::iter::repeat(T::zero()).take(d));
                }
            }
            vec![Some(dx)]
        })
    }
}

fn bmm_forward<T: Scalar>(batch: usize, m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        T::gemm(
            m,
            k,
            n,
            &a[i * m * k..(i + 1) * m * k],
            (k as isize, 1),
            &b[i * k * n..(i + 1) * k * n],
            (n as isize, 1),
            &mut out[i * m * n..(i + 1) * m * n],
            (n as isize, 1),
            false,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn bmm_backward<T: Scalar>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let ga = need[0].then(|| {
        // dA = dC · Bᵀ
        let mut ga = vec![T::zero(); batch * m * k];
        for i in 0..batch {
            T::gemm(
                m,
                n,
                k,
                &g[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
                &b[i * k * n..(i + 1) * k * n],
                (1, n as isize),
                &mut ga[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                false,
            );
        }
        ga
    });
    let gb = need[1].then(|| {
        // dB = Aᵀ · dC
        let mut gb = vec![T::zero(); batch * k * n];
        for i in 0..batch {
            T::gemm(
                k,
                m,
                n,
                &a[i * m * k..(i + 1) * m * k],
                (1, k as isize),
                &g[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
                &mut gb[i * k * n..(i + 1) * k * n],
                (n as isize, 1),
                false,
            );
        }
        gb
    });
    vec![ga, gb]
}
