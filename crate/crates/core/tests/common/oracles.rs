//! Brute-force reference implementations, written directly from the
//! metric definitions with no shared code paths.

#![allow(dead_code)]

pub type Grid = Vec<Vec<bool>>;

pub fn grid(m: &contour_core::metrics::Mask) -> Grid {
    (0..m.height()).map(|i| (0..m.width()).map(|j| m.get(i, j)).collect()).collect()
}

fn cells(g: &Grid) -> impl Iterator<Item = (usize, usize)> + '_ {
    g.iter().enumerate().flat_map(|(i, row)| row.iter().enumerate().filter(|(_, &v)| v).map(move |(j, _)| (i, j)))
}

fn counts(a: &Grid, b: &Grid) -> (usize, usize, usize) {
    let mut inter = 0;
    for i in 0..a.len() {
        for j in 0..a[0].len() {
            if a[i][j] && b[i][j] {
                inter += 1;
            }
        }
    }
    (inter, cells(a).count(), cells(b).count())
}

pub fn dice(a: &Grid, b: &Grid) -> f64 {
    let (i, na, nb) = counts(a, b);
    if na + nb == 0 {
        1.0
    } else {
        2.0 * i as f64 / (na + nb) as f64
    }
}

pub fn iou(a: &Grid, b: &Grid) -> f64 {
    let (i, na, nb) = counts(a, b);
    let u = na + nb - i;
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

pub fn rmse(a: &Grid, b: &Grid) -> f64 {
    let n = a.len() * a[0].len();
    let mut sq = 0.0;
    for i in 0..a.len() {
        for j in 0..a[0].len() {
            let d = a[i][j] as i32 as f64 - b[i][j] as i32 as f64;
            sq += d * d;
        }
    }
    (sq / n as f64).sqrt()
}

/// Foreground pixels with a background 4-neighbor inside the grid.
pub fn boundary(g: &Grid) -> Vec<(usize, usize)> {
    let (h, w) = (g.len() as isize, g[0].len() as isize);
    cells(g)
        .filter(|&(i, j)| {
            [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(di, dj)| {
                let (y, x) = (i as isize + di, j as isize + dj);
                y >= 0 && y < h && x >= 0 && x < w && !g[y as usize][x as usize]
            })
        })
        .collect()
}

fn matched(from: &[(usize, usize)], to: &[(usize, usize)], theta: f64) -> f64 {
    let hits = from
        .iter()
        .filter(|&&(i, j)| {
            to.iter().any(|&(y, x)| {
                let (dy, dx) = (i as f64 - y as f64, j as f64 - x as f64);
                dy * dy + dx * dx <= theta * theta
            })
        })
        .count();
    hits as f64 / from.len() as f64
}

pub fn boundf(gt: &Grid, pred: &Grid, theta: f64) -> f64 {
    let (bg, bp) = (boundary(gt), boundary(pred));
    match (bg.is_empty(), bp.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let p = matched(&bp, &bg, theta);
    let r = matched(&bg, &bp, theta);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Component labels by repeated min-label propagation until stable.
pub fn components(g: &Grid, eight: bool) -> Vec<Vec<usize>> {
    let (h, w) = (g.len(), g[0].len());
    let mut lab: Vec<Vec<usize>> = (0..h).map(|i| (0..w).map(|j| if g[i][j] { i * w + j + 1 } else { 0 }).collect()).collect();
    let mut offs = vec![(-1isize, 0isize), (1, 0), (0, -1), (0, 1)];
    if eight {
        offs.extend([(-1, -1), (-1, 1), (1, -1), (1, 1)]);
    }
    loop {
        let mut changed = false;
        for i in 0..h {
            for j in 0..w {
                if lab[i][j] == 0 {
                    continue;
                }
                for &(di, dj) in &offs {
                    let (y, x) = (i as isize + di, j as isize + dj);
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        continue;
                    }
                    let l = lab[y as usize][x as usize];
                    if l != 0 && l < lab[i][j] {
                        lab[i][j] = l;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return lab;
        }
    }
}

/// Same partition of the foreground, ignoring label values.
pub fn same_partition(a: &[u32], b: &[usize]) -> bool {
    use std::collections::HashMap;
    let mut ab: HashMap<u32, usize> = HashMap::new();
    let mut ba: HashMap<usize, u32> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Signed distance by exhaustive search, positive inside, with the
/// outside of the grid counted as background.
pub fn signed_distance(g: &Grid) -> Vec<Vec<f64>> {
    let (h, w) = (g.len() as isize, g[0].len() as isize);
    let fg: Vec<(isize, isize)> = cells(g).map(|(i, j)| (i as isize, j as isize)).collect();
    let mut bg: Vec<(isize, isize)> = Vec::new();
    for i in -1..=h {
        for j in -1..=w {
            let inside = i >= 0 && j >= 0 && i < h && j < w && g[i as usize][j as usize];
            if !inside {
                bg.push((i, j));
            }
        }
    }
    let nearest = |set: &[(isize, isize)], i: isize, j: isize| {
        set.iter().map(|&(y, x)| ((y - i).pow(2) + (x - j).pow(2)) as f64).fold(f64::INFINITY, f64::min).sqrt()
    };
    (0..h)
        .map(|i| {
            (0..w)
                .map(|j| {
                    if fg.is_empty() {
                        -((h + w) as f64)
                    } else if g[i as usize][j as usize] {
                        nearest(&bg, i, j)
                    } else {
                        -nearest(&fg, i, j)
                    }
                })
                .collect()
        })
        .collect()
}
