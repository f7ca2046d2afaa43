//! Central-difference verification of tape gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// max over checked coordinates of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Smallest analytic gradient magnitude among checked coordinates.
    pub min_abs_analytic: f64,
}

/// Gradient checker configuration.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Operation whose backward rule is deliberately corrupted.
    pub fault: Option<&'static str>,
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

impl GradCheck {
    pub fn new(step: f64) -> Self {
        Self { step, fault: None }
    }

    pub fn with_fault(mut self, op: &'static str) -> Self {
        self.fault = Some(op);
        self
    }

    /// Checks every coordinate of every input.
    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        self.run_selected(f, inputs, |_, _| true)
    }

    /// Checks the coordinates for which `select(input, index)` holds.
    pub fn run_selected<F, S>(&self, f: F, inputs: &[Tensor<f64>], select: S) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
        S: Fn(usize, usize) -> bool,
    {
        let analytic: Vec<Tensor<f64>> = {
            let tape = Tape::new();
            if let Some(op) = self.fault {
                tape.inject_fault(op);
            }
            let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
            let loss = f(&tape, &vars)?;
            let grads = loss.backward()?;
            vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
        };
        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<_> = perturbed.iter().map(|x| tape.constant(x.clone())).collect();
            let v = f(&tape, &vars)?.item();
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "gradient check objective".into(),
                    index: 0,
                });
            }
            Ok(v)
        };

        let mut report = GradCheckReport {
            min_abs_analytic: f64::INFINITY,
            ..Default::default()
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (input, grad) in analytic.iter().enumerate() {
            for idx in 0..inputs[input].len() {
                if !select(input, idx) {
                    continue;
                }
                let x0 = inputs[input].data()[idx];
                work[input].data_mut()[idx] = x0 + self.step;
                let plus = eval(&work)?;
                work[input].data_mut()[idx] = x0 - self.step;
                let minus = eval(&work)?;
                work[input].data_mut()[idx] = x0;

                let numeric = (plus - minus) / (2.0 * self.step);
                let a = grad.data()[idx];
                let err = relative_error(a, numeric);
                report.checked += 1;
                report.min_abs_analytic = report.min_abs_analytic.min(a.abs());
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((input, idx));
                    report.worst_analytic = a;
                    report.worst_numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

/// Max relative error between tape and central-difference gradients of a
/// scalar function of one array.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    GradCheck::new(step)
        .run(|tape, v| f(tape, v[0]), std::slice::from_ref(x))
        .map(|r| r.max_rel_error)
}
