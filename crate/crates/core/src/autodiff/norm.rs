use serde::{Deserialize, Serialize};

use super::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_VARIANCE_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running ones.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

impl<'t, T: Real> Var<'t, T> {
    /// Per-channel batch normalization of a `[B, C, H, W]` input.
    ///
    /// The running-statistic update happens outside the tape.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: BatchNormMode,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::invalid("batch_norm", format!("rank-4 input expected, got {shape:?}")));
        }
        let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        if b * hw == 0 {
            return Err(Error::invalid("batch_norm", "empty batch"));
        }
        let (gv, bv) = (gamma.value(), beta.value());
        for (name, t) in [("gamma", &*gv), ("beta", &*bv), ("running mean", running_mean), ("running var", running_var)] {
            if t.len() != c {
                return Err(Error::invalid(
                    "batch_norm",
                    format!("{name} has {} entries for {c} channels", t.len()),
                ));
            }
        }
        let count = T::from_f64((b * hw) as f64);
        let eps = T::from_f64(BN_VARIANCE_EPS);
        let chan = move |n: usize, ch: usize| (n * c + ch) * hw..(n * c + ch + 1) * hw;

        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for n in 0..b {
                        s = s + xv.data()[chan(n, ch)].iter().copied().sum::<T>();
                    }
                    let m = s / count;
                    let mut v = T::zero();
                    for n in 0..b {
                        v = v + xv.data()[chan(n, ch)].iter().map(|&x| (x - m) * (x - m)).sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = v / count;
                }
                let mom = T::from_f64(BN_MOMENTUM);
                for ch in 0..c {
                    let rm = &mut running_mean.data_mut()[ch];
                    *rm = mom * *rm + (T::one() - mom) * mean[ch];
                    let rv = &mut running_var.data_mut()[ch];
                    *rv = mom * *rv + (T::one() - mom) * var[ch];
                }
                (mean, var)
            }
            BatchNormMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..b {
            for ch in 0..c {
                let r = chan(n, ch);
                for k in r {
                    let xh = (xv.data()[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    out[k] = gv.data()[ch] * xh + bv.data()[ch];
                }
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let backward = Box::new(move |g: &Tensor<T>, needs: &[bool]| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    for k in chan(n, ch) {
                        dgamma[ch] = dgamma[ch] + g.data()[k] * xhat[k];
                        dbeta[ch] = dbeta[ch] + g.data()[k];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                for ch in 0..c {
                    let gam = gv.data()[ch];
                    match mode {
                        BatchNormMode::Train => {
                            // dxhat = g·γ; Σdxhat = γ·Σg; Σdxhat·xhat = γ·Σg·xhat
                            let s1 = gam * dbeta[ch];
                            let s2 = gam * dgamma[ch];
                            let scale = inv_std[ch] / count;
                            for n in 0..b {
                                for k in chan(n, ch) {
                                    let dxh = g.data()[k] * gam;
                                    dx[k] = scale * (count * dxh - s1 - xhat[k] * s2);
                                }
                            }
                        }
                        BatchNormMode::Eval => {
                            for n in 0..b {
                                for k in chan(n, ch) {
                                    dx[k] = g.data()[k] * gam * inv_std[ch];
                                }
                            }
                        }
                    }
                }
                Tensor::from_vec(&shape, dx).unwrap()
            });
            vec![
                dx,
                needs[1].then(|| Tensor::from_vec(&[c], dgamma.clone()).unwrap()),
                needs[2].then(|| Tensor::from_vec(&[c], dbeta.clone()).unwrap()),
            ]
        });
        Ok(self.tape.record("batch_norm", &[self, gamma, beta], value, backward))
    }
}
