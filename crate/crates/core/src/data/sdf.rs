//! Exact Euclidean distance transforms.

use crate::metrics::Mask;
use crate::tensor::Grid2D;

// Stand-in for +∞ that keeps the envelope arithmetic in exact integers.
const FAR: f64 = 1e15;

/// 1-D squared distance transform of sampled function `f` (lower envelope
/// of parabolas), written into `out`.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * (qf - p));
            // z[0] = -inf stops the walk at k = 0
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true`
/// pixel of a row-major `h × w` grid; `f64::INFINITY` if there is none.
pub fn squared_distance_to(feature: &[bool], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(feature.len(), h * w, "feature grid size");
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    let mut grid: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    for j in 0..w {
        for i in 0..h {
            col_in[i] = grid[i * w + j];
        }
        envelope_1d(&col_in, &mut col_out, &mut v, &mut z);
        for i in 0..h {
            grid[i * w + j] = col_out[i];
        }
    }
    let mut row_out = vec![0.0; w];
    for i in 0..h {
        envelope_1d(&grid[i * w..(i + 1) * w], &mut row_out, &mut v, &mut z);
        grid[i * w..(i + 1) * w].copy_from_slice(&row_out);
    }
    for d in &mut grid {
        if *d >= FAR {
            *d = f64::INFINITY;
        }
    }
    grid
}

/// Signed Euclidean distance, positive inside.
///
/// Foreground pixels get the distance to the nearest background pixel,
/// with everything outside the grid counted as background; background
/// pixels get minus the distance to the nearest foreground pixel. An
/// empty mask maps to the constant `-(h + w)`.
pub fn exact_signed_distance(mask: &Mask) -> Grid2D<f64> {
    let (h, w) = (mask.height(), mask.width());
    if mask.count() == 0 {
        return Grid2D::full(&[h, w], -((h + w) as f64));
    }
    // background with a one-pixel out-of-grid ring
    let (ph, pw) = (h + 2, w + 2);
    let mut bg = vec![true; ph * pw];
    for i in 0..h {
        for j in 0..w {
            bg[(i + 1) * pw + j + 1] = !mask.get(i, j);
        }
    }
    let to_bg = squared_distance_to(&bg, ph, pw);
    let to_fg = squared_distance_to(mask.data(), h, w);
    Grid2D::from_fn2(h, w, |i, j| {
        if mask.get(i, j) {
            to_bg[(i + 1) * pw + j + 1].sqrt()
        } else {
            -to_fg[i * w + j].sqrt()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_and_full_masks() {
        let mut m = Mask::empty(5, 5);
        m.set(2, 2, true);
        let d = exact_signed_distance(&m);
        assert_eq!(d.at2(2, 2), 1.0);
        assert_eq!(d.at2(2, 3), -1.0);
        assert_eq!(d.at2(0, 0), -(8.0f64).sqrt());

        let full = Mask::from_fn(5, 5, |_, _| true);
        let d = exact_signed_distance(&full);
        assert_eq!(d.at2(2, 2), 3.0);
        assert_eq!(d.at2(0, 0), 1.0);
    }

    #[test]
    fn empty_mask_sentinel() {
        let d = exact_signed_distance(&Mask::empty(4, 6));
        assert!(d.data().iter().all(|&v| v == -10.0));
    }

    #[test]
    fn no_feature_is_infinite() {
        let d = squared_distance_to(&[false; 6], 2, 3);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn disk_center_distance() {
        let m = Mask::from_fn(41, 41, |i, j| (i as f64 - 20.0).powi(2) + (j as f64 - 20.0).powi(2) <= 100.0);
        let d = exact_signed_distance(&m);
        assert!((d.at2(20, 20) - 10.0).abs() <= 1.0, "{}", d.at2(20, 20));
    }
}
