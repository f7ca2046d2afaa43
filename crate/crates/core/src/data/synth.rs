//! Synthetic multi-instance segmentation datasets.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{write_gray_png, write_labels_png, write_mask_png};
use super::split::Split;
use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::{Labels, Mask};
use crate::tensor::Grid2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Disks,
    Rectangles,
    /// Two overlapping disks forming one instance.
    Unions,
    Mixed,
}

impl std::str::FromStr for ShapeFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "disks" => Ok(Self::Disks),
            "rectangles" => Ok(Self::Rectangles),
            "unions" => Ok(Self::Unions),
            "mixed" => Ok(Self::Mixed),
            other => Err(format!("unknown shape family `{other}`")),
        }
    }
}

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub images: usize,
    pub size: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub shapes: ShapeFamily,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Range of the single foreground intensity of each image.
    pub foreground: [f64; 2],
    /// Range of the single background intensity of each image.
    pub background: [f64; 2],
    pub noise_sigma: f64,
    /// Add a linear illumination ramp in a random direction.
    pub gradient: bool,
    /// Peak-to-peak ramp amplitude along its direction.
    pub gradient_strength: f64,
    /// Minimum number of background pixels between instances.
    pub gap: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 250,
            size: 64,
            min_instances: 1,
            max_instances: 4,
            shapes: ShapeFamily::Disks,
            min_radius: 5.0,
            max_radius: 11.0,
            foreground: [0.55, 0.85],
            background: [0.15, 0.45],
            noise_sigma: 0.05,
            gradient: true,
            gradient_strength: 0.5,
            gap: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(format!("synth: {reason}")));
        if self.size < 4 {
            return bad(format!("size {} is too small", self.size));
        }
        if self.min_instances > self.max_instances {
            return bad("min_instances exceeds max_instances".into());
        }
        if self.max_instances > 255 {
            return bad("at most 255 instances per image".into());
        }
        if !(self.min_radius >= 1.0 && self.min_radius <= self.max_radius) {
            return bad("radius range must satisfy 1 <= min <= max".into());
        }
        if 2.0 * self.max_radius + 2.0 > self.size as f64 {
            return bad("max_radius does not fit the image".into());
        }
        for (name, r) in [("foreground", self.foreground), ("background", self.background)] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return bad(format!("{name} range must lie in [0, 1] with lo <= hi"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.gradient_strength >= 0.0) {
            return bad("noise_sigma and gradient_strength must be >= 0".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One random shape rasterized on an `n × n` grid, or `None` if it
/// leaves the image.
fn draw_shape(rng: &mut ChaCha8Rng, spec: &SynthSpec, family: ShapeFamily) -> Option<Vec<bool>> {
    let n = spec.size;
    let nf = n as f64;
    let r = uniform(rng, spec.min_radius, spec.max_radius);
    let ci = uniform(rng, 0.0, nf - 1.0);
    let cj = uniform(rng, 0.0, nf - 1.0);
    let mut px = vec![false; n * n];
    let disk = |px: &mut [bool], ci: f64, cj: f64, r: f64| {
        for i in 0..n {
            for j in 0..n {
                if (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= r * r {
                    px[i * n + j] = true;
                }
            }
        }
    };
    let inside = |ci: f64, cj: f64, hi: f64, hj: f64| ci - hi >= 0.0 && cj - hj >= 0.0 && ci + hi <= nf - 1.0 && cj + hj <= nf - 1.0;
    match family {
        ShapeFamily::Disks => {
            if !inside(ci, cj, r, r) {
                return None;
            }
            disk(&mut px, ci, cj, r);
        }
        ShapeFamily::Rectangles => {
            let hj = uniform(rng, spec.min_radius, spec.max_radius);
            if !inside(ci, cj, r, hj) {
                return None;
            }
            for i in 0..n {
                for j in 0..n {
                    if (i as f64 - ci).abs() <= r && (j as f64 - cj).abs() <= hj {
                        px[i * n + j] = true;
                    }
                }
            }
        }
        ShapeFamily::Unions => {
            let r2 = uniform(rng, spec.min_radius, r);
            let angle = uniform(rng, 0.0, std::f64::consts::TAU);
            let dist = uniform(rng, 0.3 * r, 0.9 * r);
            let (c2i, c2j) = (ci + dist * angle.sin(), cj + dist * angle.cos());
            if !inside(ci, cj, r, r) || !inside(c2i, c2j, r2, r2) {
                return None;
            }
            disk(&mut px, ci, cj, r);
            disk(&mut px, c2i, c2j, r2);
        }
        ShapeFamily::Mixed => unreachable!("resolved by caller"),
    }
    px.iter().any(|&b| b).then_some(px)
}

/// Does `shape` come within `gap` pixels (Chebyshev) of an existing instance?
fn too_close(labels: &[u32], shape: &[bool], n: usize, gap: usize) -> bool {
    let g = gap as isize;
    for (p, _) in shape.iter().enumerate().filter(|(_, &b)| b) {
        let (i, j) = ((p / n) as isize, (p % n) as isize);
        for a in (i - g).max(0)..=(i + g).min(n as isize - 1) {
            for b in (j - g).max(0)..=(j + g).min(n as isize - 1) {
                if labels[a as usize * n + b as usize] != 0 {
                    return true;
                }
            }
        }
    }
    false
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<Sample> {
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let count = rng.random_range(spec.min_instances..=spec.max_instances);

    let mut labels = vec![0u32; n * n];
    'layout: for _ in 0..100 {
        labels.iter_mut().for_each(|l| *l = 0);
        for k in 0..count {
            let mut placed = false;
            for _ in 0..500 {
                let family = match spec.shapes {
                    ShapeFamily::Mixed => [ShapeFamily::Disks, ShapeFamily::Rectangles, ShapeFamily::Unions][rng.random_range(0..3)],
                    f => f,
                };
                let Some(shape) = draw_shape(&mut rng, spec, family) else { continue };
                if too_close(&labels, &shape, n, spec.gap) {
                    continue;
                }
                for (l, &b) in labels.iter_mut().zip(&shape) {
                    if b {
                        *l = k as u32 + 1;
                    }
                }
                placed = true;
                break;
            }
            if !placed {
                continue 'layout;
            }
        }
        let fg = uniform(&mut rng, spec.foreground[0], spec.foreground[1]);
        let bg = uniform(&mut rng, spec.background[0], spec.background[1]);
        let angle = uniform(&mut rng, 0.0, std::f64::consts::TAU);
        let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma >= 0");
        let (dx, dy) = (angle.cos(), angle.sin());
        // ramp spans gradient_strength peak to peak along (dy, dx)
        let span = (n - 1) as f64 * (dx.abs() + dy.abs());
        let c = (n - 1) as f64 / 2.0;
        let image = Grid2D::from_fn2(n, n, |i, j| {
            let mut v = if labels[i * n + j] != 0 { fg } else { bg };
            if spec.gradient && span > 0.0 {
                v += spec.gradient_strength * ((j as f64 - c) * dx + (i as f64 - c) * dy) / span;
            }
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            v.clamp(0.0, 1.0)
        });
        let mask = Mask::new(n, n, labels.iter().map(|&l| l != 0).collect())?;
        let mut sample = Sample::new(format!("synth_{index:04}"), image, mask)?;
        sample.instances = Some(Labels::from_labels(n, n, labels)?);
        return Ok(sample);
    }
    Err(Error::Config(format!(
        "synth: could not place {count} instances in image {index}; lower max_instances or max_radius"
    )))
}

/// Generate `spec.images` samples; each image depends only on
/// `(spec, index)`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.images).map(|k| generate_one(spec, k)).collect()
}

/// Write samples in the folder layout read by `load_folder`.
pub fn write_dataset(samples: &[Sample], root: &Path, split: Option<&Split>) -> Result<()> {
    for s in samples {
        write_gray_png(&s.image, &root.join("images").join(format!("{}.png", s.id)))?;
        write_mask_png(&s.mask, &root.join("masks").join(format!("{}.png", s.id)))?;
        if let Some(l) = &s.instances {
            write_labels_png(l, &root.join("instances").join(format!("{}.png", s.id)))?;
        }
    }
    if let Some(split) = split {
        let path = root.join("split.json");
        let text = serde_json::to_string_pretty(split).expect("split serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{connected_components, Connectivity};

    #[test]
    fn exact_instance_count() {
        let spec = SynthSpec { images: 12, min_instances: 3, max_instances: 3, shapes: ShapeFamily::Mixed, ..Default::default() };
        for s in synth_generate(&spec).unwrap() {
            assert_eq!(connected_components(&s.mask, Connectivity::Eight).count(), 3, "{}", s.id);
            assert_eq!(s.instances.as_ref().unwrap().count(), 3);
        }
    }

    #[test]
    fn clean_images_have_two_levels() {
        let spec = SynthSpec { images: 5, noise_sigma: 0.0, gradient: false, ..Default::default() };
        for s in synth_generate(&spec).unwrap() {
            let mut levels: Vec<f64> = s.image.data().to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            assert_eq!(levels.len(), 2);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec { images: 4, ..Default::default() };
        let (a, b) = (synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
        }
        let c = synth_generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(synth_generate(&SynthSpec { min_instances: 3, max_instances: 2, ..Default::default() }).is_err());
        assert!(synth_generate(&SynthSpec { max_radius: 40.0, ..Default::default() }).is_err());
    }
}
