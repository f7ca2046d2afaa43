use std::path::PathBuf;
use std::time::Instant;

use contour_core::acm::{circle_sdf, evolve, AcmConfig};
use contour_core::autodiff::{BatchNormMode, GradCheck, GradCheckReport, Tape, Var};
use contour_core::backbone::{Backbone, BackboneConfig};
use contour_core::training::soft_dice_loss;
use contour_core::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Every tape primitive on small inputs.
    Op,
    /// Unrolled evolution with respect to `φ0`, `λ1`, `λ2`.
    Acm,
    /// Tiny backbone plus unrolled evolution with respect to the weights.
    E2e,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    pub scope: Scope,
    /// Image side length.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Unrolled evolution steps (default: 5 for acm, 3 for e2e).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Local-mean window radius.
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error (default: 1e-5 for op, 1e-4 otherwise).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Fraction of weight coordinates checked in e2e scope.
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Corrupt the backward rule of this tape operation.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_input: Option<usize>,
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub min_abs_analytic: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scope: Scope,
    pub size: usize,
    pub steps: usize,
    pub radius: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub cases: Vec<CaseReport>,
}

fn case(name: &str, r: GradCheckReport, tolerance: f64) -> CaseReport {
    CaseReport {
        name: name.to_string(),
        checked: r.checked,
        max_rel_error: r.max_rel_error,
        worst_input: r.worst.map(|w| w.0),
        worst_index: r.worst.map(|w| w.1),
        worst_analytic: r.worst_analytic,
        worst_numeric: r.worst_numeric,
        min_abs_analytic: r.min_abs_analytic,
        passed: r.checked > 0 && r.max_rel_error < tolerance,
    }
}

/// Deterministic smooth values in `[offset - amp, offset + amp]`.
fn wave(shape: &[usize], phase: f64, offset: f64, amp: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|k| offset + amp * (1.37 * k as f64 + phase).sin()).collect();
    Tensor::from_vec(shape, data).expect("wave shape")
}

/// Values on a lattice that stays at least 0.03 from 0 and ±0.5.
fn off_kink(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|k| 0.2 * ((k * 3) % 7) as f64 - 0.63).collect();
    Tensor::from_vec(shape, data).expect("lattice shape")
}

/// Weighted sum `Σ w·y` with fixed weights, so every output coordinate
/// contributes with a distinct, non-vanishing factor.
fn weighted<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = tape.constant(wave(&y.shape(), 0.3, 0.5, 0.4));
    Ok(y.mul(w)?.sum())
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

fn op<F>(f: F) -> OpFn
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'static,
{
    Box::new(f)
}

fn op_cases() -> Vec<(&'static str, OpFn, Vec<Tensor<f64>>)> {
    let s = [1, 2, 6, 6];
    let a = wave(&s, 0.1, 0.0, 1.0);
    let b = wave(&s, 1.9, 0.0, 1.0);
    let pos = wave(&s, 0.7, 1.5, 1.0);
    macro_rules! case {
        ($name:expr, [$($x:expr),*], |$t:ident, $v:ident| $body:expr) => {
            ($name, op(move |$t, $v| weighted($t, $body)), vec![$($x.clone()),*])
        };
    }
    vec![
        case!("add", [a, b], |t, v| v[0].add(v[1])?),
        case!("sub", [a, b], |t, v| v[0].sub(v[1])?),
        case!("mul", [a, b], |t, v| v[0].mul(v[1])?),
        case!("div", [a, pos], |t, v| v[0].div(v[1])?),
        case!("div_unguarded", [a, pos], |t, v| v[0].div_unguarded(v[1])?),
        case!("neg", [a], |t, v| v[0].neg()),
        case!("scale", [a], |t, v| v[0].scale(-1.7)),
        case!("add_scalar", [a], |t, v| v[0].add_scalar(0.4)),
        case!("rsub_scalar", [a], |t, v| v[0].rsub_scalar(0.4)),
        case!("square", [a], |t, v| v[0].square()),
        case!("sqrt", [pos], |t, v| v[0].sqrt()),
        case!("atan", [a], |t, v| v[0].atan()),
        case!("sigmoid", [a], |t, v| v[0].sigmoid()),
        case!("softplus", [a], |t, v| v[0].softplus()),
        case!("heaviside", [a], |t, v| v[0].heaviside(1.0)),
        case!("dirac", [a], |t, v| v[0].dirac(1.0)),
        case!("relu", [off_kink(&s)], |t, v| v[0].relu()),
        case!("clamp", [off_kink(&s)], |t, v| v[0].clamp(-0.5, 0.5)),
        case!("sum_trailing", [a], |t, v| v[0].sum_trailing(2)?),
        case!("expand", [Tensor::scalar(0.8)], |t, v| v[0].expand(&[1, 2, 3, 3])?),
        case!("spatial_mean", [a], |t, v| v[0].spatial_mean()),
        case!("reshape", [a], |t, v| v[0].reshape(&[2, 1, 6, 6])?),
        case!("concat_channels", [a, b], |t, v| Var::concat_channels(&[v[0], v[1]])?),
        case!("shift_clamped", [a], |t, v| v[0].shift_clamped(1, -2)),
        case!("box_filter_masked", [a], |t, v| v[0].box_filter_masked(2)?),
        case!("downsample2", [a], |t, v| v[0].downsample2()?),
        case!("upsample2", [a], |t, v| v[0].upsample2()),
        case!("resize", [a], |t, v| v[0].resize(-1)?),
        case!(
            "conv2d",
            [a, wave(&[3, 2, 3, 3], 2.3, 0.0, 0.5), wave(&[3], 0.9, 0.0, 0.5)],
            |t, v| v[0].conv2d(v[1], Some(v[2]), 2, 1)?
        ),
        case!(
            "conv2d_strided",
            [a, wave(&[3, 2, 3, 3], 2.3, 0.0, 0.5)],
            |t, v| v[0].conv2d(v[1], None, 1, 2)?
        ),
        case!(
            "batch_norm",
            [wave(&[2, 2, 4, 4], 0.4, 0.2, 1.0), wave(&[2], 0.5, 1.0, 0.3), wave(&[2], 1.5, 0.0, 0.3)],
            |t, v| {
                let (mut m, mut var) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
                v[0].batch_norm(v[1], v[2], &mut m, &mut var, BatchNormMode::Train)?
            }
        ),
    ]
}

fn checker(args: &Args) -> GradCheck {
    let gc = GradCheck::new(args.step);
    match &args.inject_fault {
        Some(op) => gc.with_fault(Box::leak(op.clone().into_boxed_str())),
        None => gc,
    }
}

/// Image with alternating intensities and a mild smooth component, so
/// that `I − m` stays away from zero everywhere.
pub fn checker_image(n: usize) -> Tensor<f64> {
    Tensor::from_fn2(n, n, |i, j| {
        let (y, x) = (i as f64, j as f64);
        let c = if (i + j) % 2 == 0 { 0.3 } else { -0.3 };
        0.5 + c + 0.1 * (0.7 * y + 0.3).sin() * (0.5 * x - 0.2).cos()
    })
}

fn disk_target(n: usize) -> Tensor<f64> {
    let c = n as f64 / 2.0;
    circle_sdf::<f64>(n, n, (c, c - 0.5), n as f64 * 0.3).map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn acm_case(args: &Args, steps: usize, tol: f64) -> CliResult<Vec<CaseReport>> {
    let n = args.size;
    let cfg = AcmConfig { radius: args.radius, ..AcmConfig::default() };
    cfg.validate()?;
    let c = n as f64 / 2.0;
    let img = checker_image(n).reshape(&[1, 1, n, n])?;
    let gt = disk_target(n).reshape(&[1, 1, n, n])?;
    let inputs = [
        circle_sdf(n, n, (c - 0.5, c), n as f64 * 0.25).map(|v| 0.4 * v).reshape(&[1, 1, n, n])?,
        Tensor::from_fn2(n, n, |i, j| 1.0 + 0.3 * (0.8 * i as f64 + 0.5 * j as f64).sin()).reshape(&[1, 1, n, n])?,
        Tensor::from_fn2(n, n, |i, j| 1.0 + 0.3 * (0.6 * j as f64 - 0.4 * i as f64).cos()).reshape(&[1, 1, n, n])?,
    ];
    let r = checker(args).run(
        |tape, v| {
            let phi = evolve(v[0], tape.constant(img.clone()), v[1], v[2], &cfg, steps)?;
            soft_dice_loss(phi.sigmoid(), tape.constant(gt.clone()))
        },
        &inputs,
    )?;
    Ok(vec![case("acm", r, tol)])
}

fn e2e_case(args: &Args, steps: usize, tol: f64) -> CliResult<Vec<CaseReport>> {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::config("--fraction must be in (0, 1]"));
    }
    let n = args.size;
    let net = Backbone::new(BackboneConfig::tiny())?;
    let store = net.init::<f64>(args.seed)?;
    let cfg = AcmConfig { radius: args.radius, ..AcmConfig::default() };
    cfg.validate()?;
    let img = checker_image(n).reshape(&[1, 1, n, n])?;
    let gt = disk_target(n).reshape(&[1, 1, n, n])?;
    let params = store.param_values();
    let total: usize = params.iter().map(Tensor::len).sum();
    let k = ((total as f64 * args.fraction).ceil() as usize).clamp(1, total);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let chosen: std::collections::HashSet<usize> = rand::seq::index::sample(&mut rng, total, k).into_iter().collect();
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let r = checker(args).run_selected(
        |tape, v| {
            let mut st = store.clone();
            let bound = st.bind_vars(v)?;
            let heads = net.forward(&mut st, &bound, tape.constant(img.clone()), BatchNormMode::Train)?;
            let phi = evolve(heads.phi0, tape.constant(img.clone()), heads.lambda1, heads.lambda2, &cfg, steps)?;
            soft_dice_loss(phi.sigmoid(), tape.constant(gt.clone()))
        },
        &params,
        |input, idx| chosen.contains(&(offsets[input] + idx)),
    )?;
    Ok(vec![case("e2e", r, tol)])
}

pub fn check(args: &Args) -> CliResult<Report> {
    let start = Instant::now();
    let (steps, tol) = match args.scope {
        Scope::Op => (0, args.tolerance.unwrap_or(1e-5)),
        Scope::Acm => (args.steps.unwrap_or(5), args.tolerance.unwrap_or(1e-4)),
        Scope::E2e => (args.steps.unwrap_or(3), args.tolerance.unwrap_or(1e-4)),
    };
    if args.scope != Scope::Op && steps == 0 {
        return Err(CliError::config("--steps must be >= 1"));
    }
    if !(args.step > 0.0) {
        return Err(CliError::config("--step must be > 0"));
    }
    let cases = match args.scope {
        Scope::Op => {
            let mut out = Vec::new();
            for (name, f, inputs) in op_cases() {
                out.push(case(name, checker(args).run(f, &inputs)?, tol));
            }
            out
        }
        Scope::Acm => {
            if args.size < 2 * args.radius + 2 {
                return Err(CliError::config(format!("--size {} is too small for --radius {}", args.size, args.radius)));
            }
            acm_case(args, steps, tol)?
        }
        Scope::E2e => {
            let m = BackboneConfig::tiny().size_multiple();
            if args.size % m != 0 || args.size < 2 * args.radius + 2 {
                return Err(CliError::config(format!("--size must be a multiple of {m} and exceed 2·radius + 1")));
            }
            e2e_case(args, steps, tol)?
        }
    };
    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(Report {
        scope: args.scope,
        size: args.size,
        steps,
        radius: args.radius,
        step: args.step,
        tolerance: tol,
        seconds: start.elapsed().as_secs_f64(),
        max_rel_error,
        passed: cases.iter().all(|c| c.passed),
        cases,
    })
}

pub fn run(args: Args) -> CliResult<()> {
    let report = check(&args)?;
    for c in &report.cases {
        println!(
            "{:<18} {:>6} coords  max rel err {:.3e}  min |grad| {:.3e}  {}",
            c.name,
            c.checked,
            c.max_rel_error,
            c.min_abs_analytic,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    println!(
        "{:?} scope: max rel err {:.3e} (tolerance {:.0e}) in {:.2}s",
        report.scope, report.max_rel_error, report.tolerance, report.seconds
    );
    if let Some(path) = &args.report {
        super::write_file(path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::numerical(format!("gradient check failed: max rel err {:.3e}", report.max_rel_error)))
    }
}
