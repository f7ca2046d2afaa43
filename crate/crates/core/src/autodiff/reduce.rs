//! Reductions, broadcasts and layout operations.

use super::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let value = Tensor::scalar(xv.sum());
        self.tape.record(
            "sum",
            &[self],
            value,
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over the trailing `k` dimensions; the result keeps the
    /// leading shape (e.g. `[B, C, H, W]` with `k = 3` gives `[B]`).
    pub fn sum_trailing(self, k: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if k > shape.len() {
            return Err(Error::invalid(
                "sum_trailing",
                format!("cannot reduce {k} dims of shape {shape:?}"),
            ));
        }
        let lead = &shape[..shape.len() - k];
        let inner: usize = shape[shape.len() - k..].iter().product();
        let data: Vec<T> = xv
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().copied().sum())
            .collect();
        let value = Tensor::from_vec(lead, data)?;
        Ok(self.tape.record(
            "sum_trailing",
            &[self],
            value,
            Box::new(move |g, _| {
                let mut out = Vec::with_capacity(g.len() * inner);
                for &v in g.data() {
                    out.extend(std::iter::repeat_n(v, inner));
                }
                vec![Some(Tensor::from_vec(&shape, out).unwrap())]
            }),
        ))
    }

    /// Broadcasts a single-element variable to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        if xv.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "expand",
                left: xv.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let src_shape = xv.shape().to_vec();
        let value = Tensor::full(shape, xv.data()[0]);
        Ok(self.tape.record(
            "expand",
            &[self],
            value,
            Box::new(move |g, _| vec![Some(Tensor::from_vec(&src_shape, vec![g.sum()]).unwrap())]),
        ))
    }

    /// Replaces every spatial plane by its mean value.
    pub fn spatial_mean(self) -> Var<'t, T> {
        let xv = self.value();
        let (h, w) = xv.spatial();
        let hw = (h * w).max(1);
        let inv = T::one() / T::from_f64(hw as f64);
        let mean_fill = move |t: &Tensor<T>| {
            let mut out = Vec::with_capacity(t.len());
            for plane in t.data().chunks(hw) {
                let m = plane.iter().copied().sum::<T>() * inv;
                out.extend(std::iter::repeat_n(m, hw));
            }
            Tensor::from_vec(t.shape(), out).unwrap()
        };
        let value = mean_fill(&xv);
        // symmetric linear operator: its own transpose
        self.tape.record(
            "spatial_mean",
            &[self],
            value,
            Box::new(move |g, _| vec![Some(mean_fill(g))]),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let src = xv.shape().to_vec();
        let value = (*xv).clone().reshape(shape)?;
        Ok(self.tape.record(
            "reshape",
            &[self],
            value,
            Box::new(move |g, _| vec![Some(g.clone().reshape(&src).unwrap())]),
        ))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "nothing to concatenate"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let s0 = values[0].shape().to_vec();
        if s0.len() != 4 {
            return Err(Error::invalid("concat_channels", format!("rank-4 input expected, got {s0:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: s0.clone(),
                    right: s.to_vec(),
                });
            }
        }
        let (b, hw) = (s0[0], s0[2] * s0[3]);
        let chans: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(b * total * hw);
        for n in 0..b {
            for (v, &c) in values.iter().zip(&chans) {
                data.extend_from_slice(&v.data()[n * c * hw..(n + 1) * c * hw]);
            }
        }
        let value = Tensor::from_vec(&[b, total, s0[2], s0[3]], data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.tape.record(
            "concat_channels",
            parts,
            value,
            Box::new(move |g, needs| {
                let mut offsets = Vec::with_capacity(chans.len());
                let mut off = 0;
                for &c in &chans {
                    offsets.push(off);
                    off += c;
                }
                shapes
                    .iter()
                    .zip(&chans)
                    .zip(&offsets)
                    .zip(needs)
                    .map(|(((shape, &c), &o), &need)| {
                        need.then(|| {
                            let mut out = Vec::with_capacity(b * c * hw);
                            for n in 0..b {
                                let base = (n * total + o) * hw;
                                out.extend_from_slice(&g.data()[base..base + c * hw]);
                            }
                            Tensor::from_vec(shape, out).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tape};
    use super::*;

    #[test]
    fn sum_trailing_keeps_leading_shape() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(f64::from).collect()).unwrap());
        let s = x.sum_trailing(3).unwrap();
        assert_eq!(s.shape(), vec![2]);
        assert_eq!(s.value().data(), &[6.0, 22.0]);
        let g = s.mul(s).unwrap().sum().backward().unwrap();
        assert_eq!(&g.get(x).unwrap().data()[..4], &[12.0; 4]);
    }

    #[test]
    fn spatial_mean_and_concat_gradients() {
        let x = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let err = grad_check(
            |tape, v| {
                let c = tape.constant(Tensor::from_vec(&[2, 1, 3, 3], (0..18).map(|i| i as f64).collect()).unwrap());
                let cat = Var::concat_channels(&[c, v, v])?;
                Ok(cat.spatial_mean().mul(cat)?.sum())
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn expand_sums_gradient() {
        let tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::scalar(1.5));
        let e = s.expand(&[2, 3]).unwrap();
        assert_eq!(e.value().data(), &[1.5; 6]);
        let g = e.sum().backward().unwrap();
        assert_eq!(g.get(s).unwrap().data(), &[6.0]);
    }
}
