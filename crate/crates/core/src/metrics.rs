//! Overlap, instance-coverage and boundary metrics on binary masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::sdf::squared_distance_to;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Grid2D;

/// Default boundary matching tolerance in pixels.
pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 2.0;

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(
                "mask",
                format!("{} values for a {height}x{width} mask", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    /// Foreground where the value exceeds 0.5.
    pub fn from_grid<T: Real>(grid: &Grid2D<T>) -> Self {
        let (height, width) = grid.spatial();
        let half = T::from_f64(0.5);
        Self {
            height,
            width,
            data: grid.data().iter().map(|&v| v > half).collect(),
        }
    }

    pub fn to_grid<T: Real>(&self) -> Grid2D<T> {
        Grid2D::from_fn2(self.height, self.width, |i, j| if self.get(i, j) { T::one() } else { T::zero() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.width + j] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn check_same(&self, other: &Mask, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                op,
                left: vec![self.height, self.width],
                right: vec![other.height, other.width],
            });
        }
        Ok(())
    }

    fn overlap(&self, other: &Mask, op: &'static str) -> Result<(usize, usize, usize)> {
        self.check_same(other, op)?;
        let (mut inter, mut a, mut b) = (0, 0, 0);
        for (&x, &y) in self.data.iter().zip(&other.data) {
            inter += (x && y) as usize;
            a += x as usize;
            b += y as usize;
        }
        Ok((inter, a, b))
    }
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, na, nb) = a.overlap(b, "dice")?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, na, nb) = a.overlap(b, "iou")?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

pub fn rmse(gt: &Mask, pred: &Mask) -> Result<f64> {
    gt.check_same(pred, "rmse")?;
    if gt.data.is_empty() {
        return Ok(0.0);
    }
    let diff = gt.data.iter().zip(&pred.data).filter(|(a, b)| a != b).count();
    Ok((diff as f64 / gt.data.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Instance labeling: 0 is background, instances are `1..=count` in
/// raster order of their first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl Labels {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.width + j]
    }

    /// Pixel count of each instance, indexed by `label - 1`.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                areas[l as usize - 1] += 1;
            }
        }
        areas
    }

    /// Mask of instance `label` (1-based).
    pub fn instance(&self, label: u32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Build from an explicit label array (0 = background, labels dense in `1..=max`).
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid("labels", "label count does not match shape"));
        }
        let count = labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(Self { height, width, labels, count })
    }
}

/// Flood-fill connected component labeling.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Labels {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (i, j) = ((p / w) as isize, (p % w) as isize);
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if (di == 0 && dj == 0) || (connectivity == Connectivity::Four && di != 0 && dj != 0) {
                        continue;
                    }
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= h as isize || b >= w as isize {
                        continue;
                    }
                    let q = a as usize * w + b as usize;
                    if mask.data[q] && labels[q] == 0 {
                        labels[q] = count;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    Labels { height: h, width: w, labels, count: count as usize }
}

/// Weighted coverage: `Σ_g |g|/Σ|g'| · max_p IoU(g, p)` over ground-truth
/// instances `g` and 8-connected predicted instances `p`.
///
/// Without ground-truth instances the score is 1 if the prediction is
/// empty and 0 otherwise.
pub fn wcov(gt: &Labels, pred: &Mask) -> Result<f64> {
    if (gt.height, gt.width) != (pred.height, pred.width) {
        return Err(Error::ShapeMismatch {
            op: "wcov",
            left: vec![gt.height, gt.width],
            right: vec![pred.height, pred.width],
        });
    }
    let pred_labels = connected_components(pred, Connectivity::Eight);
    let gt_areas = gt.areas();
    let total: usize = gt_areas.iter().sum();
    if total == 0 {
        return Ok(if pred.count() == 0 { 1.0 } else { 0.0 });
    }
    let pred_areas = pred_labels.areas();
    // intersections[g][p]
    let mut inter = vec![vec![0usize; pred_labels.count]; gt.count];
    for (&g, &p) in gt.labels.iter().zip(&pred_labels.labels) {
        if g > 0 && p > 0 {
            inter[g as usize - 1][p as usize - 1] += 1;
        }
    }
    let mut score = 0.0;
    for (g, &area) in gt_areas.iter().enumerate() {
        let best = (0..pred_labels.count)
            .map(|p| {
                let i = inter[g][p];
                i as f64 / (area + pred_areas[p] - i) as f64
            })
            .fold(0.0, f64::max);
        score += area as f64 * best;
    }
    Ok(score / total as f64)
}

/// Foreground pixels with at least one in-grid background 4-neighbor.
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    Mask::from_fn(h, w, |i, j| {
        if !mask.get(i, j) {
            return false;
        }
        (i > 0 && !mask.get(i - 1, j))
            || (i + 1 < h && !mask.get(i + 1, j))
            || (j > 0 && !mask.get(i, j - 1))
            || (j + 1 < w && !mask.get(i, j + 1))
    })
}

/// Boundary F-measure with matching tolerance `theta` pixels.
///
/// Two empty boundaries score 1; exactly one empty boundary scores 0.
pub fn boundf(gt: &Mask, pred: &Mask, theta: f64) -> Result<f64> {
    gt.check_same(pred, "boundf")?;
    if !(theta >= 0.0) {
        return Err(Error::invalid("boundf", format!("tolerance must be >= 0, got {theta}")));
    }
    let (bg, bp) = (boundary(gt), boundary(pred));
    let (ng, np) = (bg.count(), bp.count());
    if ng == 0 && np == 0 {
        return Ok(1.0);
    }
    if ng == 0 || np == 0 {
        return Ok(0.0);
    }
    let precision = matched_fraction(&bp, &bg, theta);
    let recall = matched_fraction(&bg, &bp, theta);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Fraction of `from` pixels within `theta` of some `to` pixel.
fn matched_fraction(from: &Mask, to: &Mask, theta: f64) -> f64 {
    let d2 = squared_distance_to(to.data(), to.height, to.width);
    let limit = theta * theta;
    let total = from.count();
    let hits = from
        .data
        .iter()
        .zip(&d2)
        .filter(|&(&f, &d)| f && d <= limit)
        .count();
    hits as f64 / total as f64
}

/// Metrics for one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub wcov: f64,
    pub boundf: f64,
    pub rmse: f64,
    pub gt_instances: usize,
    pub pred_instances: usize,
}

/// Per-image metrics and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_dice: f64,
    /// Mean IoU over images.
    pub miou: f64,
    pub mean_wcov: f64,
    pub mean_boundf: f64,
    pub mean_rmse: f64,
    pub boundary_tolerance: f64,
}

/// All metrics for one pair; gt instances are its 8-connected components.
pub fn evaluate(id: &str, gt: &Mask, pred: &Mask, theta: f64) -> Result<ImageMetrics> {
    let gt_labels = connected_components(gt, Connectivity::Eight);
    evaluate_instances(id, gt, &gt_labels, pred, theta)
}

/// As [`evaluate`] with explicit ground-truth instances.
pub fn evaluate_instances(id: &str, gt: &Mask, gt_labels: &Labels, pred: &Mask, theta: f64) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        id: id.to_string(),
        dice: dice(gt, pred)?,
        iou: iou(gt, pred)?,
        wcov: wcov(gt_labels, pred)?,
        boundf: boundf(gt, pred, theta)?,
        rmse: rmse(gt, pred)?,
        gt_instances: gt_labels.count,
        pred_instances: connected_components(pred, Connectivity::Eight).count,
    })
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, boundary_tolerance: f64) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Self {
            mean_dice: mean(|m| m.dice),
            miou: mean(|m| m.iou),
            mean_wcov: mean(|m| m.wcov),
            mean_boundf: mean(|m| m.boundf),
            mean_rmse: mean(|m| m.rmse),
            per_image,
            boundary_tolerance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, lo: usize, hi: usize) -> Mask {
        Mask::from_fn(n, n, |i, j| (lo..hi).contains(&i) && (lo..hi).contains(&j))
    }

    #[test]
    fn overlap_examples() {
        let a = square(6, 1, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = square(6, 4, 6);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let e = Mask::empty(6, 6);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);

        let x = Mask::new(2, 2, vec![true, true, false, false]).unwrap();
        let y = Mask::new(2, 2, vec![true, false, true, true]).unwrap();
        assert_eq!(iou(&x, &y).unwrap(), 0.25);
    }

    #[test]
    fn rmse_examples() {
        let a = square(5, 1, 3);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let c = Mask::new(5, 5, a.data().iter().map(|b| !b).collect()).unwrap();
        assert_eq!(rmse(&a, &c).unwrap(), 1.0);
        let mut d = a.clone();
        d.set(0, 0, true);
        assert_eq!(rmse(&a, &d).unwrap(), (1.0f64 / 25.0).sqrt());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(dice(&Mask::empty(3, 3), &Mask::empty(3, 4)).is_err());
        assert!(boundf(&Mask::empty(3, 3), &Mask::empty(4, 3), 2.0).is_err());
    }

    #[test]
    fn components_of_disks() {
        let disk = |ci: f64, cj: f64| move |i: usize, j: usize| (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= 9.0;
        let (a, b, c) = (disk(5.0, 5.0), disk(5.0, 20.0), disk(20.0, 12.0));
        let m = Mask::from_fn(30, 30, |i, j| a(i, j) || b(i, j) || c(i, j));
        assert_eq!(connected_components(&m, Connectivity::Eight).count(), 3);
        assert_eq!(connected_components(&Mask::empty(4, 4), Connectivity::Eight).count(), 0);
        // diagonal neighbors join only under 8-connectivity
        let diag = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(connected_components(&diag, Connectivity::Eight).count(), 1);
        assert_eq!(connected_components(&diag, Connectivity::Four).count(), 2);
    }

    #[test]
    fn wcov_examples() {
        let gt = square(8, 2, 6);
        let labels = connected_components(&gt, Connectivity::Eight);
        assert_eq!(wcov(&labels, &gt).unwrap(), 1.0);

        // two instances with areas 3:1, one predicted exactly, the other missed
        let gt = Mask::from_fn(4, 8, |i, j| (i == 0 && j < 3) || (i == 3 && j == 7));
        let labels = connected_components(&gt, Connectivity::Eight);
        let pred = Mask::from_fn(4, 8, |i, j| i == 0 && j < 3);
        assert_eq!(wcov(&labels, &pred).unwrap(), 0.75);

        let e = Mask::empty(4, 4);
        let none = connected_components(&e, Connectivity::Eight);
        assert_eq!(wcov(&none, &e).unwrap(), 1.0);
        assert_eq!(wcov(&none, &square(4, 0, 1)).unwrap(), 0.0);
    }

    #[test]
    fn wcov_single_instance_is_iou() {
        let gt = square(10, 2, 7);
        let pred = square(10, 3, 8);
        let labels = connected_components(&gt, Connectivity::Eight);
        assert!((wcov(&labels, &pred).unwrap() - iou(&gt, &pred).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn boundary_ignores_grid_edge() {
        let full = Mask::from_fn(4, 4, |_, _| true);
        assert_eq!(boundary(&full).count(), 0);
        let sq = square(6, 1, 5);
        // 4×4 square: ring of 12 pixels
        assert_eq!(boundary(&sq).count(), 12);
    }

    #[test]
    fn boundf_examples() {
        let a = square(16, 3, 13);
        assert_eq!(boundf(&a, &a, 2.0).unwrap(), 1.0);
        // nested squares with boundaries θ + 2 = 4 pixels apart
        let inner = square(16, 7, 9);
        assert_eq!(boundf(&a, &inner, 2.0).unwrap(), 0.0);
        let e = Mask::empty(16, 16);
        assert_eq!(boundf(&e, &e, 2.0).unwrap(), 1.0);
        assert_eq!(boundf(&a, &e, 2.0).unwrap(), 0.0);
        assert!(boundf(&a, &a, -1.0).is_err());
    }

    #[test]
    fn report_means() {
        let a = square(6, 1, 4);
        let b = square(6, 2, 5);
        let m1 = evaluate("a", &a, &a, 2.0).unwrap();
        let m2 = evaluate("b", &a, &b, 2.0).unwrap();
        let r = MetricsReport::from_images(vec![m1.clone(), m2.clone()], 2.0);
        assert_eq!(r.mean_dice, (m1.dice + m2.dice) / 2.0);
        assert_eq!(r.miou, (m1.iou + m2.iou) / 2.0);
        assert_eq!(m1.gt_instances, 1);
    }
}
