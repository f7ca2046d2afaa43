//! Level-set active contour with per-pixel region weights.
//!
//! The contour is the zero level set of `φ`, with the interior at `φ > 0`.
//! Each evolution step moves `φ` along
//!
//! ```text
//! ∂φ/∂t = δε(φ) · [ μ·div(∇φ/|∇φ|) − ν − λ1·(I − m1)² + λ2·(I − m2)² ]
//! ```
//!
//! where `m1`, `m2` are the mean intensities inside and outside the
//! contour within a window around each pixel. Every step is built from
//! tape operations, so an unrolled evolution can be differentiated with
//! respect to the initial level set and both parameter maps.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Grid2D, Tensor};

/// Scalar parameters of the contour evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcmConfig {
    /// Length penalty.
    pub mu: f64,
    /// Area penalty.
    pub nu: f64,
    /// Heaviside smoothing width, in pixels.
    pub epsilon: f64,
    /// Explicit Euler time step.
    pub dt: f64,
    /// Local-mean window radius in pixels.
    pub radius: usize,
    /// Use whole-image means instead of windowed ones (classic two-phase
    /// piecewise-constant model; diagnostic).
    pub global_means: bool,
    /// Narrow band half-width for evaluation-mode evolution.
    pub band_half_width: f64,
    /// Iterations for evaluation-mode evolution.
    pub iterations: usize,
    /// Treat the region means as constants during backpropagation.
    pub stop_gradient_means: bool,
}

impl Default for AcmConfig {
    fn default() -> Self {
        Self {
            mu: 0.2,
            nu: 0.0,
            epsilon: 1.0,
            dt: 0.5,
            radius: 5,
            global_means: false,
            band_half_width: 8.0,
            iterations: 60,
            stop_gradient_means: false,
        }
    }
}

impl AcmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Config(format!("acm: {reason}")));
        if !(self.mu >= 0.0) {
            return bad("mu must be >= 0");
        }
        if !self.nu.is_finite() {
            return bad("nu must be finite");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if self.radius < 1 {
            return bad("radius must be >= 1");
        }
        if !(self.band_half_width >= 1.0) {
            return bad("band_half_width must be >= 1");
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        Ok(())
    }
}

/// Local interior / exterior mean intensities.
pub struct RegionMeans<'t, T> {
    pub inside: Var<'t, T>,
    pub outside: Var<'t, T>,
}

/// Smoothed indicator of the interior.
pub fn heaviside<'t, T: Real>(phi: Var<'t, T>, eps: f64) -> Var<'t, T> {
    phi.heaviside(eps)
}

pub fn dirac<'t, T: Real>(phi: Var<'t, T>, eps: f64) -> Var<'t, T> {
    phi.dirac(eps)
}

/// Central differences `(∂φ/∂x, ∂φ/∂y)` with replicated borders.
fn gradient<'t, T: Real>(phi: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let dx = phi.shift_clamped(0, 1).sub(phi.shift_clamped(0, -1))?.scale(0.5);
    let dy = phi.shift_clamped(1, 0).sub(phi.shift_clamped(-1, 0))?.scale(0.5);
    Ok((dx, dy))
}

/// Guarded gradient magnitude `sqrt(φx² + φy² + η)`.
pub fn gradient_magnitude<'t, T: Real>(phi: Var<'t, T>) -> Result<Var<'t, T>> {
    let (dx, dy) = gradient(phi)?;
    Ok(dx.square().add(dy.square())?.sqrt())
}

/// `div(∇φ / |∇φ|)`.
pub fn curvature<'t, T: Real>(phi: Var<'t, T>) -> Result<Var<'t, T>> {
    let (dx, dy) = gradient(phi)?;
    let norm = dx.square().add(dy.square())?.sqrt();
    let nx = dx.div(norm)?;
    let ny = dy.div(norm)?;
    let (dnx, _) = gradient(nx)?;
    let (_, dny) = gradient(ny)?;
    dnx.add(dny)
}

fn window_mean<'t, T: Real>(x: Var<'t, T>, cfg: &AcmConfig) -> Result<Var<'t, T>> {
    if cfg.global_means {
        Ok(x.spatial_mean())
    } else {
        x.box_filter_masked(cfg.radius)
    }
}

/// `m1 = box(I·H)/box(H)`, `m2 = box(I·(1−H))/box(1−H)`.
pub fn local_region_means<'t, T: Real>(
    image: Var<'t, T>,
    phi: Var<'t, T>,
    cfg: &AcmConfig,
) -> Result<RegionMeans<'t, T>> {
    if image.shape() != phi.shape() {
        return Err(Error::ShapeMismatch {
            op: "local_region_means",
            left: image.shape(),
            right: phi.shape(),
        });
    }
    let h = phi.heaviside(cfg.epsilon);
    let outside_w = h.rsub_scalar(1.0);
    let inside = window_mean(image.mul(h)?, cfg)?.div(window_mean(h, cfg)?)?;
    let outside = window_mean(image.mul(outside_w)?, cfg)?.div(window_mean(outside_w, cfg)?)?;
    if cfg.stop_gradient_means {
        Ok(RegionMeans {
            inside: inside.detach(),
            outside: outside.detach(),
        })
    } else {
        Ok(RegionMeans { inside, outside })
    }
}

/// Total energy: `Σ μ·δε|∇φ| + ν·Hε + λ1(I−m1)²Hε + λ2(I−m2)²(1−Hε)`.
pub fn energy<'t, T: Real>(
    image: Var<'t, T>,
    phi: Var<'t, T>,
    lambda1: Var<'t, T>,
    lambda2: Var<'t, T>,
    cfg: &AcmConfig,
) -> Result<Var<'t, T>> {
    let h = phi.heaviside(cfg.epsilon);
    let means = local_region_means(image, phi, cfg)?;
    let length = phi.dirac(cfg.epsilon).mul(gradient_magnitude(phi)?)?.scale(cfg.mu);
    let area = h.scale(cfg.nu);
    let inner = lambda1
        .mul(image.sub(means.inside)?.square())?
        .mul(h)?;
    let outer = lambda2
        .mul(image.sub(means.outside)?.square())?
        .mul(h.rsub_scalar(1.0))?;
    Ok(length.add(area)?.add(inner)?.add(outer)?.sum())
}

/// Descent direction `δε(φ)·[μκ − ν − λ1(I−m1)² + λ2(I−m2)²]`.
pub fn force<'t, T: Real>(
    phi: Var<'t, T>,
    image: Var<'t, T>,
    lambda1: Var<'t, T>,
    lambda2: Var<'t, T>,
    cfg: &AcmConfig,
) -> Result<Var<'t, T>> {
    let means = local_region_means(image, phi, cfg)?;
    let kappa = curvature(phi)?.scale(cfg.mu).add_scalar(-cfg.nu);
    let inner = lambda1.mul(image.sub(means.inside)?.square())?;
    let outer = lambda2.mul(image.sub(means.outside)?.square())?;
    phi.dirac(cfg.epsilon).mul(kappa.sub(inner)?.add(outer)?)
}

fn check_finite<T: Real>(v: &Tensor<T>, context: &str) -> Result<()> {
    match v.first_non_finite() {
        None => Ok(()),
        Some(index) => {
            let (_, w) = v.spatial();
            let plane = index / (v.len() / v.planes().max(1)).max(1);
            let within = index % (v.len() / v.planes().max(1)).max(1);
            Err(Error::NonFinite {
                context: format!(
                    "{context} (plane {plane}, row {}, col {})",
                    within / w,
                    within % w
                ),
                index,
            })
        }
    }
}

/// One explicit Euler step `φ + Δt·F(φ)`.
pub fn acm_step<'t, T: Real>(
    phi: Var<'t, T>,
    image: Var<'t, T>,
    lambda1: Var<'t, T>,
    lambda2: Var<'t, T>,
    cfg: &AcmConfig,
) -> Result<Var<'t, T>> {
    let next = phi.add(force(phi, image, lambda1, lambda2, cfg)?.scale(cfg.dt))?;
    check_finite(&next.value(), "acm_step")?;
    Ok(next)
}

/// `steps` composed updates on one tape.
pub fn evolve<'t, T: Real>(
    phi0: Var<'t, T>,
    image: Var<'t, T>,
    lambda1: Var<'t, T>,
    lambda2: Var<'t, T>,
    cfg: &AcmConfig,
    steps: usize,
) -> Result<Var<'t, T>> {
    if steps == 0 {
        return Err(Error::Config("acm: iteration count must be >= 1".into()));
    }
    let mut phi = phi0;
    for _ in 0..steps {
        phi = acm_step(phi, image, lambda1, lambda2, cfg)?;
    }
    Ok(phi)
}

/// Pixels with `|φ| < half_width`, as a 0/1 field.
pub fn narrow_band_mask<T: Real>(phi: &Grid2D<T>, half_width: f64) -> Grid2D<T> {
    let hw = T::from_f64(half_width);
    phi.map(|v| if v.abs() < hw { T::one() } else { T::zero() })
}

/// Inference-time evolution without gradient bookkeeping.
///
/// With `banded`, each step only updates pixels inside the narrow band
/// around the current contour (re-banded every step); others keep their
/// value.
pub fn evolve_eval<T: Real>(
    phi0: &Tensor<T>,
    image: &Tensor<T>,
    lambda1: &Tensor<T>,
    lambda2: &Tensor<T>,
    cfg: &AcmConfig,
    banded: bool,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut phi = phi0.clone();
    for _ in 0..cfg.iterations {
        let tape = Tape::new();
        let p = tape.constant(phi.clone());
        let f = force(
            p,
            tape.constant(image.clone()),
            tape.constant(lambda1.clone()),
            tape.constant(lambda2.clone()),
            cfg,
        )?
        .value();
        let dt = T::from_f64(cfg.dt);
        let band = T::from_f64(cfg.band_half_width);
        for (v, &fv) in phi.data_mut().iter_mut().zip(f.data()) {
            if !banded || v.abs() < band {
                *v = *v + dt * fv;
            }
        }
        check_finite(&phi, "acm_step")?;
    }
    Ok(phi)
}

/// Foreground probability `sigmoid(φ)`.
pub fn logits_from_levelset<'t, T: Real>(phi: Var<'t, T>) -> Var<'t, T> {
    phi.sigmoid()
}

/// Binary interior mask `φ > 0` as a 0/1 field.
pub fn interior_mask<T: Real>(phi: &Tensor<T>) -> Tensor<T> {
    phi.map(|v| if v > T::zero() { T::one() } else { T::zero() })
}

/// Exact signed distance to a circle, positive inside: `R − |p − c|`.
pub fn circle_sdf<T: Real>(h: usize, w: usize, center: (f64, f64), radius: f64) -> Grid2D<T> {
    Tensor::from_fn2(h, w, |i, j| {
        let d = ((i as f64 - center.0).powi(2) + (j as f64 - center.1).powi(2)).sqrt();
        T::from_f64(radius - d)
    })
}
