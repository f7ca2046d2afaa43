use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;

/// Smoothing constant of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

/// `1 − (2·Σ y·g + s) / (Σ y + Σ g + s)` per sample, averaged over the
/// batch. Rank-4 inputs are `[B, C, H, W]` batches; anything else is one
/// sample.
pub fn soft_dice_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch { op: "soft_dice_loss", left: pred.shape(), right: target.shape() });
    }
    let shape = pred.shape();
    let (pred, target) = if shape.len() == 4 {
        (pred, target)
    } else {
        let flat = [1, 1, 1, pred.len()];
        (pred.reshape(&flat)?, target.reshape(&flat)?)
    };
    let inter = pred.mul(target)?.sum_trailing(3)?;
    let num = inter.scale(2.0).add_scalar(DICE_SMOOTH);
    let den = pred.sum_trailing(3)?.add(target.sum_trailing(3)?)?.add_scalar(DICE_SMOOTH);
    // den >= s > 0, so no guard
    Ok(num.div_unguarded(den)?.rsub_scalar(1.0).mean())
}

/// Mean squared difference, used for the optional distance-map loss.
pub fn mse<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.square().mean())
}
