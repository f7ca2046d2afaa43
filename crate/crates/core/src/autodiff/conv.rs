//! 2D cross-correlation with dilation, stride and "same" zero padding,
//! lowered to GEMM through an im2col buffer.

use std::sync::Arc;

use rayon::prelude::*;

use super::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    dilation: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Whether the im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Input column for output column `o` and kernel tap `t`, if in bounds.
    #[inline]
    fn src(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let pos = (o * self.stride + t * self.dilation) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (k, ow, ncol) = (self.k, self.ow, self.cols());
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((ci * k + ki) * k + kj) * ncol..][..ncol];
                    for oi in 0..self.oh {
                        let dst = &mut row[oi * ow..(oi + 1) * ow];
                        match self.src(oi, ki, self.h) {
                            None => dst.fill(T::zero()),
                            Some(si) => {
                                let src = &plane[si * self.w..(si + 1) * self.w];
                                for (oj, d) in dst.iter_mut().enumerate() {
                                    *d = self.src(oj, kj, self.w).map_or(T::zero(), |sj| src[sj]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let (k, ow, ncol) = (self.k, self.ow, self.cols());
        for ci in 0..self.cin {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((ci * k + ki) * k + kj) * ncol..][..ncol];
                    for oi in 0..self.oh {
                        let Some(si) = self.src(oi, ki, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[si * self.w..(si + 1) * self.w];
                        for (oj, &v) in row[oi * ow..(oi + 1) * ow].iter().enumerate() {
                            if let Some(sj) = self.src(oj, kj, self.w) {
                                dst[sj] = dst[sj] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Convolves `[B, Cin, H, W]` with `[Cout, Cin, k, k]` (k odd), padding
    /// by `dilation·(k-1)/2` so that stride 1 preserves the spatial size.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        dilation: usize,
        stride: usize,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::invalid(
                "conv2d",
                format!("expected rank-4 input and weight, got {xs:?} and {ws:?}"),
            ));
        }
        if ws[1] != xs[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ws,
            });
        }
        let k = ws[2];
        if ws[3] != k || k % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be square with odd size, got {}x{}", ws[2], ws[3]),
            ));
        }
        if dilation == 0 || stride == 0 {
            return Err(Error::invalid("conv2d", "dilation and stride must be positive"));
        }
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.len() != ws[0] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: ws.clone(),
                    right: b.shape().to_vec(),
                });
            }
        }
        let (batch, cout) = (xs[0], ws[0]);
        let g = Geometry {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            k,
            dilation,
            stride,
            pad: dilation * (k - 1) / 2,
            oh: (xs[2] - 1) / stride + 1,
            ow: (xs[3] - 1) / stride + 1,
        };
        let in_size = g.cin * g.h * g.w;
        let out_size = cout * g.cols();

        let per_sample: Vec<Vec<T>> = (0..batch)
            .into_par_iter()
            .map(|n| {
                let x = &xv.data()[n * in_size..(n + 1) * in_size];
                let mut out = vec![T::zero(); out_size];
                if let Some(b) = &bv {
                    for (c, chunk) in out.chunks_mut(g.cols()).enumerate() {
                        chunk.fill(b.data()[c]);
                    }
                }
                let cols_buf;
                let cols: &[T] = if g.is_pointwise() {
                    x
                } else {
                    let mut buf = vec![T::zero(); g.rows() * g.cols()];
                    g.im2col(x, &mut buf);
                    cols_buf = buf;
                    &cols_buf
                };
                T::gemm(cout, g.rows(), g.cols(), wv.data(), false, cols, false, &mut out, true);
                out
            })
            .collect();
        let value = Tensor::from_vec(&[batch, cout, g.oh, g.ow], per_sample.concat())?;

        let xv = Arc::clone(&xv);
        let wv = Arc::clone(&wv);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        let backward = Box::new(move |gout: &Tensor<T>, needs: &[bool]| {
            let parts: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..batch)
                .into_par_iter()
                .map(|n| {
                    let go = &gout.data()[n * out_size..(n + 1) * out_size];
                    let x = &xv.data()[n * in_size..(n + 1) * in_size];
                    let dw = needs[1].then(|| {
                        let mut dw = vec![T::zero(); cout * g.rows()];
                        if g.is_pointwise() {
                            T::gemm(cout, g.cols(), g.rows(), go, false, x, true, &mut dw, false);
                        } else {
                            let mut cols = vec![T::zero(); g.rows() * g.cols()];
                            g.im2col(x, &mut cols);
                            T::gemm(cout, g.cols(), g.rows(), go, false, &cols, true, &mut dw, false);
                        }
                        dw
                    });
                    let dx = needs[0].then(|| {
                        let mut dcols = vec![T::zero(); g.rows() * g.cols()];
                        T::gemm(g.rows(), cout, g.cols(), wv.data(), true, go, false, &mut dcols, false);
                        if g.is_pointwise() {
                            dcols
                        } else {
                            let mut dx = vec![T::zero(); in_size];
                            g.col2im(&dcols, &mut dx);
                            dx
                        }
                    });
                    (dx, dw)
                })
                .collect();

            let mut dx_all = needs[0].then(|| Vec::with_capacity(batch * in_size));
            let mut dw_sum = needs[1].then(|| vec![T::zero(); cout * g.rows()]);
            // fixed reduction order over the batch
            for (dx, dw) in parts {
                if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                    all.extend(dx);
                }
                if let (Some(sum), Some(dw)) = (dw_sum.as_mut(), dw) {
                    sum.iter_mut().zip(dw).for_each(|(a, b)| *a = *a + b);
                }
            }
            let mut grads = vec![
                dx_all.map(|d| Tensor::from_vec(&[batch, g.cin, g.h, g.w], d).unwrap()),
                dw_sum.map(|d| Tensor::from_vec(wv.shape(), d).unwrap()),
            ];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for n in 0..batch {
                        for (c, acc) in db.iter_mut().enumerate() {
                            let off = n * out_size + c * g.cols();
                            *acc = *acc + gout.data()[off..off + g.cols()].iter().copied().sum::<T>();
                        }
                    }
                    Tensor::from_vec(&[cout], db).unwrap()
                }));
            }
            grads
        });
        Ok(self.tape.record("conv2d", &inputs, value, backward))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{GradCheck, Tape};
    use super::*;

    fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n = shape.iter().product();
        let mut s = seed;
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Nested-loop oracle, written independently of the im2col path.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], d: usize, s: usize) -> Tensor<f64> {
        let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let pad = (d * (k - 1) / 2) as isize;
        let (oh, ow) = ((h - 1) / s + 1, (wd - 1) / s + 1);
        let mut out = vec![0.0; bn * cout * oh * ow];
        for n in 0..bn {
            for co in 0..cout {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (oi * s) as isize + (ki * d) as isize - pad;
                                    let jj = (oj * s) as isize + (kj * d) as isize - pad;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((n * cin + ci) * h + ii as usize) * wd + jj as usize;
                                    let wi = ((co * cin + ci) * k + ki) * k + kj;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out[((n * cout + co) * oh + oi) * ow + oj] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[bn, cout, oh, ow], out).unwrap()
    }

    #[test]
    fn all_ones_center_and_corner() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = x.conv2d(w, None, 1, 1).unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.at2(1, 1), 9.0);
        assert_eq!(y.at2(0, 0), 4.0);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        for (d, s, k, cin, cout) in [(2, 1, 3, 2, 3), (1, 1, 1, 2, 2), (1, 2, 3, 2, 2), (3, 1, 5, 1, 2), (6, 1, 3, 2, 1)] {
            let x = noise(&[2, cin, 5, 5], 1 + d as u64);
            let w = noise(&[cout, cin, k, k], 2 + s as u64);
            let b = noise(&[cout], 3);
            let tape = Tape::<f64>::new();
            let y = tape
                .constant(x.clone())
                .conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), d, s)
                .unwrap()
                .value();
            let expect = naive_conv(&x, &w, b.data(), d, s);
            assert_eq!(y.shape(), expect.shape());
            for (a, e) in y.data().iter().zip(expect.data()) {
                assert!((a - e).abs() < 1e-12, "d={d} s={s} k={k}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (d, s, k) in [(1, 1, 3), (2, 1, 3), (1, 2, 3), (1, 1, 1)] {
            let inputs = [noise(&[2, 2, 5, 6], 7), noise(&[3, 2, k, k], 8), noise(&[3], 9)];
            let target = noise(&[2, 3, (5 - 1) / s + 1, (6 - 1) / s + 1], 10);
            let report = GradCheck::new(1e-6)
                .run(
                    |tape, v| {
                        let y = v[0].conv2d(v[1], Some(v[2]), d, s)?;
                        Ok(y.mul(tape.constant(target.clone()))?.sum())
                    },
                    &inputs,
                )
                .unwrap();
            assert!(report.max_rel_error < 1e-7, "d={d} s={s}: {report:?}");
        }
    }

    #[test]
    fn rejects_bad_kernels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]));
        let even = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        assert!(x.conv2d(even, None, 1, 1).is_err());
        let wrong = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        assert!(matches!(x.conv2d(wrong, None, 1, 1), Err(Error::ShapeMismatch { .. })));
    }
}
