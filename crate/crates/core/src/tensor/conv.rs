use std::rc::Rc;

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Output extent of a valid (unpadded) convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Column count of the batched im2col matrix.
    fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// Unfolds every receptive field into a `[C·k·k × N·Ho·Wo]` matrix whose
/// column `n·Ho·Wo + p` is the patch of image `n` at output position `p`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.columns();
    let per_image = g.positions();
    let mut out = vec![T::zero(); g.patch() * cols];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let plane = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let src_row = &plane[(oy * g.stride + ki) * g.w..][..g.w];
                        let base = n * per_image + oy * g.wo;
                        for ox in 0..g.wo {
                            dst[base + ox] = src_row[ox * g.stride + kj];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<T: Scalar>(cols_grad: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.columns();
    let per_image = g.positions();
    let mut dx = vec![T::zero(); g.batch * g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let plane = &mut dx[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let dst_row = &mut plane[(oy * g.stride + ki) * g.w..][..g.w];
                        let base = n * per_image + oy * g.wo;
                        for ox in 0..g.wo {
                            let d = &mut dst_row[ox * g.stride + kj];
                            *d = *d + src[base + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Valid cross-correlation plus per-channel bias.
    ///
    /// `self` is `[C_in×H×W]` or batched `[N×C_in×H×W]`; `kernels` is
    /// `[C_out×C_in×k×k]` and `bias` is `[C_out]`. The output keeps the
    /// batching of the input.
    pub fn conv2d(self, kernels: Var<'t, T>, bias: Var<'t, T>, stride: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let kv = kernels.value();
        let bv = bias.value();
        let (xs, ks) = (x.shape(), kv.shape());
        let batched = xs.len() == 4;
        let (batch, c_in, h, w) = match xs {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(Error::dim("conv2d input", xs, ks)),
        };
        let [c_out, kc, kh, kw] = ks else {
            return Err(Error::dim("conv2d kernels", xs, ks));
        };
        let (c_out, k) = (*c_out, *kh);
        if *kc != c_in || kh != kw || bv.shape() != [c_out] {
            return Err(Error::dim("conv2d", xs, ks));
        }
        let (Some(ho), Some(wo)) = (conv_output_size(h, k, stride), conv_output_size(w, k, stride))
        else {
            return Err(Error::dim("conv2d kernel larger than input", xs, ks));
        };
        let g = Geometry {
            batch,
            c_in,
            h,
            w,
            k,
            stride,
            ho,
            wo,
        };

        let cols = Rc::new(im2col(x.data(), &g));
        let n_cols = g.columns();
        let patch = g.patch();
        // Y[c_out × N·P] = K[c_out × patch] · cols
        let mut y = vec![T::zero(); c_out * n_cols];
        T::gemm(
            c_out,
            patch,
            n_cols,
            kv.data(),
            (patch as isize, 1),
            &cols,
            (n_cols as isize, 1),
            &mut y,
            (n_cols as isize, 1),
            false,
        );
        let p = g.positions();
        let mut out = vec![T::zero(); batch * c_out * p];
        for co in 0..c_out {
            let b = bv.data()[co];
            for n in 0..batch {
                let src = &y[co * n_cols + n * p..][..p];
                let dst = &mut out[(n * c_out + co) * p..][..p];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + b);
            }
        }
        let shape: Vec<usize> = if batched {
            vec![batch, c_out, ho, wo]
        } else {
            vec![c_out, ho, wo]
        };
        let value = Tensor::new(&shape, out)?;

        Ok(self.tape().op(value, &[self, kernels, bias], move |grad, need| {
            // Back to the [c_out × N·P] layout of the forward GEMM.
            let mut gy = vec![T::zero(); c_out * n_cols];
            for co in 0..c_out {
                for n in 0..batch {
                    gy[co * n_cols + n * p..][..p]
                        .copy_from_slice(&grad[(n * c_out + co) * p..][..p]);
                }
            }
            let gk = need[1].then(|| {
                let mut gk = vec![T::zero(); c_out * patch];
                T::gemm(
                    c_out,
                    n_cols,
                    patch,
                    &gy,
                    (n_cols as isize, 1),
                    &cols,
                    (1, n_cols as isize),
                    &mut gk,
                    (patch as isize, 1),
                    false,
                );
                gk
            });
            let gb = need[2].then(|| {
                gy.chunks(n_cols)
                    .map(|row| T::from_f64_lossy(super::sum_f64(row)))
                    .collect()
            });
            let gx = need[0].then(|| {
                let mut gcols = vec![T::zero(); patch * n_cols];
                T::gemm(
                    patch,
                    c_out,
                    n_cols,
                    kv.data(),
                    (1, patch as isize),
                    &gy,
                    (n_cols as isize, 1),
                    &mut gcols,
                    (n_cols as isize, 1),
                    false,
                );
                col2im(&gcols, &g)
            });
            vec![gx, gk, gb]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tape};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Vec<f64> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, ks) = (k.shape()[0], k.shape()[2]);
        let ho = (h - ks) / stride + 1;
        let wo = (w - ks) / stride + 1;
        let mut out = Vec::new();
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co];
                    for c in 0..c_in {
                        for i in 0..ks {
                            for j in 0..ks {
                                acc += x.get(&[c, oy * stride + i, ox * stride + j])
                                    * k.get(&[co, c, i, j]);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn output_size_follows_floor_formula() {
        assert_eq!(conv_output_size(28, 9, 1), Some(20));
        assert_eq!(conv_output_size(20, 9, 2), Some(6));
        assert_eq!(conv_output_size(8, 3, 1), Some(6));
        assert_eq!(conv_output_size(6, 3, 2), Some(2));
        assert_eq!(conv_output_size(7, 3, 2), Some(3));
        assert_eq!(conv_output_size(3, 9, 1), None);
        for h in 1..40 {
            for k in 1..=h {
                for s in 1..4 {
                    assert_eq!(conv_output_size(h, k, s), Some((h - k) / s + 1));
                }
            }
        }
    }

    #[test]
    fn capsnet_shape_chain() {
        let tape = Tape::<f32>::new();
        let img = tape.constant(Tensor::zeros(&[1, 28, 28]));
        let k1 = tape.constant(Tensor::zeros(&[256, 1, 9, 9]));
        let b1 = tape.constant(Tensor::zeros(&[256]));
        let h = img.conv2d(k1, b1, 1).unwrap();
        assert_eq!(h.shape(), vec![256, 20, 20]);
        assert!(h.value().data().iter().all(|&v| v == 0.0));

        let k2 = tape.constant(Tensor::zeros(&[256, 256, 9, 9]));
        let b2 = tape.constant(Tensor::zeros(&[256]));
        let p = h.conv2d(k2, b2, 2).unwrap();
        assert_eq!(p.shape(), vec![256, 6, 6]);
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let tape = Tape::<f64>::new();
        let img = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[2, 1, 5, 5]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(img.conv2d(k, b, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matches_naive_loops() {
        for &(stride, seed) in &[(1usize, 1u64), (2, 2), (3, 3)] {
            let x = random(&[3, 9, 8], seed);
            let k = random(&[4, 3, 3, 3], seed + 10);
            let b = random(&[4], seed + 20);
            let tape = Tape::<f64>::new();
            let out = tape
                .constant(x.clone())
                .conv2d(tape.constant(k.clone()), tape.constant(b.clone()), stride)
                .unwrap();
            let expect = naive_conv(&x, &k, &b, stride);
            for (a, e) in out.value().data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_matches_per_image() {
        let x = random(&[3, 2, 7, 7], 5);
        let k = random(&[3, 2, 3, 3], 6);
        let b = random(&[3], 7);
        let tape = Tape::<f64>::new();
        let batched = tape
            .constant(x.clone())
            .conv2d(tape.constant(k.clone()), tape.constant(b.clone()), 2)
            .unwrap()
            .value();
        let per = 2 * 7 * 7;
        for n in 0..3 {
            let img = Tensor::new(&[2, 7, 7], x.data()[n * per..(n + 1) * per].to_vec()).unwrap();
            let expect = naive_conv(&img, &k, &b, 2);
            let got = &batched.data()[n * expect.len()..(n + 1) * expect.len()];
            for (a, e) in got.iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let k = random(&[3, 2, 3, 3], 2);
        let b = random(&[3], 3);
        let x = random(&[2, 2, 7, 6], 1);
        let (k1, b1) = (k.clone(), b.clone());
        let err = grad_check(
            move |tape: &Tape<f64>, xv| {
                let out = xv.conv2d(tape.constant(k1.clone()), tape.constant(b1.clone()), 2)?;
                Ok(out.square().sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "input grad {err}");

        let (x1, b1) = (x.clone(), b.clone());
        let err = grad_check(
            move |tape: &Tape<f64>, kv| {
                let out = tape.constant(x1.clone()).conv2d(kv, tape.constant(b1.clone()), 1)?;
                Ok(out.sigmoid().sum())
            },
            &k,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "kernel grad {err}");

        let err = grad_check(
            move |tape: &Tape<f64>, bv| {
                let out = tape.constant(x.clone()).conv2d(tape.constant(k.clone()), bv, 1)?;
                Ok(out.square().sum())
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "bias grad {err}");
    }
}
