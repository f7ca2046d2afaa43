//! Operations over the trailing two (spatial) dimensions.

use super::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Sum over the `(2r+1)²` window clipped to the grid, for every plane.
fn box_sum<T: Real>(x: &[T], planes: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut rows = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut prefix = vec![T::zero(); h.max(w) + 1];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..h {
            let row = &x[base + i * w..base + (i + 1) * w];
            for j in 0..w {
                prefix[j + 1] = prefix[j] + row[j];
            }
            for j in 0..w {
                let lo = j.saturating_sub(r);
                let hi = (j + r + 1).min(w);
                rows[base + i * w + j] = prefix[hi] - prefix[lo];
            }
        }
        for j in 0..w {
            for i in 0..h {
                prefix[i + 1] = prefix[i] + rows[base + i * w + j];
            }
            for i in 0..h {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(h);
                out[base + i * w + j] = prefix[hi] - prefix[lo];
            }
        }
    }
    out
}

/// Number of in-grid pixels in each clipped window of one plane.
fn window_counts<T: Real>(h: usize, w: usize, r: usize) -> Vec<T> {
    let span = |k: usize, n: usize| ((k + r + 1).min(n) - k.saturating_sub(r)) as f64;
    let mut counts = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            counts.push(T::from_f64(span(i, h) * span(j, w)));
        }
    }
    counts
}

/// Bilinear ×2 taps for one axis (half-pixel centers, clamped edges).
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let k = o / 2;
            if o % 2 == 0 {
                let lo = k.saturating_sub(1);
                (lo, k, 0.25, 0.75)
            } else {
                let hi = (k + 1).min(n - 1);
                (k, hi, 0.75, 0.25)
            }
        })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// `out(i, j) = x(clamp(i + di), clamp(j + dj))`: replicate boundary.
    pub fn shift_clamped(self, di: isize, dj: isize) -> Var<'t, T> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let (h, w) = xv.spatial();
        let src = move |i: usize, j: usize| {
            let si = (i as isize + di).clamp(0, h as isize - 1) as usize;
            let sj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
            si * w + sj
        };
        let planes = xv.planes();
        let mut out = Vec::with_capacity(xv.len());
        for p in 0..planes {
            let plane = &xv.data()[p * h * w..(p + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    out.push(plane[src(i, j)]);
                }
            }
        }
        let value = Tensor::from_vec(&shape, out).unwrap();
        self.tape.record(
            "shift_clamped",
            &[self],
            value,
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); g.len()];
                for p in 0..planes {
                    let base = p * h * w;
                    for i in 0..h {
                        for j in 0..w {
                            let s = base + src(i, j);
                            gx[s] = gx[s] + g.data()[base + i * w + j];
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&shape, gx).unwrap())]
            }),
        )
    }

    /// Windowed mean over the `(2r+1)²` neighborhood, normalized by the
    /// number of in-grid pixels so edges carry no zero-padding bias.
    pub fn box_filter_masked(self, radius: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (h, w) = xv.spatial();
        if radius == 0 || radius >= h.min(w) {
            return Err(Error::invalid(
                "box_filter_masked",
                format!("radius {radius} must be in 1..{} for a {h}x{w} grid", h.min(w)),
            ));
        }
        let shape = xv.shape().to_vec();
        let planes = xv.planes();
        let counts = window_counts::<T>(h, w, radius);
        let sums = box_sum(xv.data(), planes, h, w, radius);
        let out: Vec<T> = sums
            .iter()
            .enumerate()
            .map(|(k, &s)| s / counts[k % (h * w)])
            .collect();
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.tape.record(
            "box_filter_masked",
            &[self],
            value,
            Box::new(move |g, _| {
                // transpose: scatter g/count over each window
                let scaled: Vec<T> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v / counts[k % (h * w)])
                    .collect();
                let gx = box_sum(&scaled, planes, h, w, radius);
                vec![Some(Tensor::from_vec(&shape, gx).unwrap())]
            }),
        ))
    }

    /// 2×2 average pooling.
    pub fn downsample2(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (h, w) = xv.spatial();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(
                "resize",
                format!("cannot halve odd spatial dims {h}x{w}"),
            ));
        }
        let in_shape = xv.shape().to_vec();
        let mut out_shape = in_shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = h / 2;
        out_shape[r - 1] = w / 2;
        let (oh, ow) = (h / 2, w / 2);
        let planes = xv.planes();
        let quarter = T::from_f64(0.25);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let x = &xv.data()[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let a = 2 * i * w + 2 * j;
                    out.push((x[a] + x[a + 1] + x[a + w] + x[a + w + 1]) * quarter);
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.tape.record(
            "downsample2",
            &[self],
            value,
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = g.data()[p * oh * ow + i * ow + j] * quarter;
                            let a = p * h * w + 2 * i * w + 2 * j;
                            gx[a] = v;
                            gx[a + 1] = v;
                            gx[a + w] = v;
                            gx[a + w + 1] = v;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&in_shape, gx).unwrap())]
            }),
        ))
    }

    /// Bilinear ×2 upsampling with half-pixel centers and clamped edges.
    pub fn upsample2(self) -> Var<'t, T> {
        let xv = self.value();
        let (h, w) = xv.spatial();
        let in_shape = xv.shape().to_vec();
        let mut out_shape = in_shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = 2 * h;
        out_shape[r - 1] = 2 * w;
        let (oh, ow) = (2 * h, 2 * w);
        let rows = upsample_taps(h);
        let cols = upsample_taps(w);
        let planes = xv.planes();
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let x = &xv.data()[p * h * w..(p + 1) * h * w];
            for &(r0, r1, a0, a1) in &rows {
                let (a0, a1) = (T::from_f64(a0), T::from_f64(a1));
                for &(c0, c1, b0, b1) in &cols {
                    let (b0, b1) = (T::from_f64(b0), T::from_f64(b1));
                    let top = x[r0 * w + c0] * b0 + x[r0 * w + c1] * b1;
                    let bottom = x[r1 * w + c0] * b0 + x[r1 * w + c1] * b1;
                    out.push(top * a0 + bottom * a1);
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, out).unwrap();
        self.tape.record(
            "upsample2",
            &[self],
            value,
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let gx = &mut gx[p * h * w..(p + 1) * h * w];
                    let gp = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    for (oi, &(r0, r1, a0, a1)) in rows.iter().enumerate() {
                        let (a0, a1) = (T::from_f64(a0), T::from_f64(a1));
                        for (oj, &(c0, c1, b0, b1)) in cols.iter().enumerate() {
                            let (b0, b1) = (T::from_f64(b0), T::from_f64(b1));
                            let v = gp[oi * ow + oj];
                            gx[r0 * w + c0] = gx[r0 * w + c0] + v * a0 * b0;
                            gx[r0 * w + c1] = gx[r0 * w + c1] + v * a0 * b1;
                            gx[r1 * w + c0] = gx[r1 * w + c0] + v * a1 * b0;
                            gx[r1 * w + c1] = gx[r1 * w + c1] + v * a1 * b1;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&in_shape, gx).unwrap())]
            }),
        )
    }

    /// Rescales by `2^levels`: positive levels upsample bilinearly,
    /// negative levels average-pool.
    pub fn resize(self, levels: i32) -> Result<Var<'t, T>> {
        let mut v = self;
        for _ in 0..levels.unsigned_abs() {
            v = if levels > 0 { v.upsample2() } else { v.downsample2()? };
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tape};
    use super::*;

    fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n = shape.iter().product();
        let mut s = seed;
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn box_filter_preserves_constants() {
        let tape = Tape::<f64>::new();
        let c = 0.3137;
        for r in 1..4 {
            let x = tape.constant(Tensor::full(&[2, 7, 9], c));
            let y = x.box_filter_masked(r).unwrap().value();
            assert!(y.data().iter().all(|&v| (v - c).abs() < 1e-15), "r={r}");
        }
    }

    #[test]
    fn box_filter_impulse_enumerates_overlaps() {
        let tape = Tape::<f64>::new();
        let mut x = Tensor::zeros(&[3, 3]);
        x.set2(1, 1, 1.0);
        // radius must be < min(h, w); radius 1 on 3×3
        let y = tape.constant(x).box_filter_masked(1).unwrap().value();
        // corners see a 2×2 window, edge centers 2×3, the center 3×3
        assert!((y.at2(0, 0) - 1.0 / 4.0).abs() < 1e-15);
        assert!((y.at2(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert!((y.at2(1, 0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((y.at2(1, 1) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn box_filter_rejects_large_radius() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[4, 6]));
        assert!(x.box_filter_masked(4).is_err());
        assert!(x.box_filter_masked(0).is_err());
        assert!(x.box_filter_masked(3).is_ok());
    }

    #[test]
    fn box_filter_gradient_matches_finite_differences() {
        let x = noise(&[2, 6, 7], 3);
        let w = noise(&[2, 6, 7], 4);
        let err = grad_check(
            |tape, v| Ok(v.box_filter_masked(2)?.mul(tape.constant(w.clone()))?.sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_ops_backward_reconstructs_transpose() {
        // column k of the forward matrix via basis vectors must equal row k
        // of the backward (transpose) matrix
        let (h, w) = (4, 5);
        let n = h * w;
        type Op = for<'t> fn(Var<'t, f64>) -> Var<'t, f64>;
        let ops: [(&str, Op); 3] = [
            ("box", |v| v.box_filter_masked(2).unwrap()),
            ("shift", |v| v.shift_clamped(1, -1)),
            ("up", |v| v.upsample2()),
        ];
        for (name, op) in ops {
            let mut forward = Vec::new();
            for k in 0..n {
                let tape = Tape::new();
                let mut e = Tensor::zeros(&[h, w]);
                e.data_mut()[k] = 1.0;
                forward.push(op(tape.constant(e)).value().data().to_vec());
            }
            let m = forward[0].len();
            for row in 0..m {
                let tape = Tape::new();
                let x = tape.leaf(Tensor::zeros(&[h, w]));
                let y = op(x);
                let mut sel = Tensor::zeros(&y.shape());
                sel.data_mut()[row] = 1.0;
                let g = y.mul(tape.constant(sel)).unwrap().sum().backward().unwrap();
                let grad = g.get(x).unwrap();
                for k in 0..n {
                    assert_eq!(grad.data()[k], forward[k][row], "{name} row {row} col {k}");
                }
            }
        }
    }

    #[test]
    fn resize_examples() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        assert_eq!(x.downsample2().unwrap().value().data(), &[1.5]);

        let c = tape.constant(Tensor::full(&[1, 1, 3, 5], 0.42));
        let up = c.upsample2();
        assert_eq!(up.shape(), vec![1, 1, 6, 10]);
        assert!(up.value().data().iter().all(|&v| (v - 0.42).abs() < 1e-15));
        let round = up.downsample2().unwrap().value();
        assert!(round.data().iter().all(|&v| (v - 0.42).abs() < 1e-15));

        assert!(tape.constant(Tensor::zeros(&[3, 4])).downsample2().is_err());
    }

    #[test]
    fn upsample_matches_direct_interpolation() {
        let x = noise(&[4, 4], 11);
        let tape = Tape::<f64>::new();
        let y = tape.constant(x.clone()).upsample2().value();
        // oracle: sample at source coordinate (o + 0.5)/2 - 0.5, clamped
        let sample = |c: f64, n: usize| {
            let c = c.clamp(0.0, (n - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - i0 as f64)
        };
        for oi in 0..8 {
            for oj in 0..8 {
                let (r0, r1, fr) = sample((oi as f64 + 0.5) / 2.0 - 0.5, 4);
                let (c0, c1, fc) = sample((oj as f64 + 0.5) / 2.0 - 0.5, 4);
                let expect = (1.0 - fr) * ((1.0 - fc) * x.at2(r0, c0) + fc * x.at2(r0, c1))
                    + fr * ((1.0 - fc) * x.at2(r1, c0) + fc * x.at2(r1, c1));
                assert!((y.at2(oi, oj) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_and_shift_gradients() {
        let x = noise(&[1, 2, 4, 6], 5);
        let err = grad_check(
            |_, v| {
                let y = v.resize(1)?.shift_clamped(-1, 2).resize(-1)?;
                Ok(y.square().sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
