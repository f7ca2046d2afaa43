//! Raster folders: `images/` and `masks/` matched by file stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};

use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::{Labels, Mask};
use crate::tensor::Grid2D;

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

/// Raster files of a directory keyed by stem.
pub fn rasters(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem, path.clone()) {
            return Err(Error::Data {
                path,
                reason: format!("duplicate stem, also {}", prev.display()),
            });
        }
    }
    Ok(out)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Data {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Gray intensities in `[0, 1]`; color collapsed by Rec. 601 luminance.
pub fn read_gray(path: &Path) -> Result<Grid2D<f64>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let px = rgb.as_raw();
        Ok(Grid2D::from_fn2(h, w, |i, j| {
            let k = 3 * (i * w + j);
            (0.299 * px[k] as f64 + 0.587 * px[k + 1] as f64 + 0.114 * px[k + 2] as f64) / 255.0
        }))
    } else {
        let g = img.to_luma8();
        let px = g.as_raw();
        Ok(Grid2D::from_fn2(h, w, |i, j| px[i * w + j] as f64 / 255.0))
    }
}

/// Foreground where the 8-bit gray value is at least 128.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = decode(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Mask::new(h, w, g.as_raw().iter().map(|&v| v >= 128).collect())
}

/// Instance labels stored as gray levels, 0 = background.
pub fn read_labels(path: &Path) -> Result<Labels> {
    let g = decode(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Labels::from_labels(h, w, g.as_raw().iter().map(|&v| v as u32).collect())
}

/// Load `<root>/images` and `<root>/masks` (and `<root>/instances` when
/// present), paired by stem, in lexicographic order.
pub fn load_folder(root: &Path) -> Result<Vec<Sample>> {
    let images = rasters(&root.join("images"))?;
    let masks = rasters(&root.join("masks"))?;
    let inst_dir = root.join("instances");
    let instances = if inst_dir.is_dir() { rasters(&inst_dir)? } else { BTreeMap::new() };
    if let Some((stem, path)) = images.iter().find(|(s, _)| !masks.contains_key(*s)) {
        return Err(Error::Data {
            path: path.clone(),
            reason: format!("image `{stem}` has no mask"),
        });
    }
    if let Some((stem, path)) = masks.iter().find(|(s, _)| !images.contains_key(*s)) {
        return Err(Error::Data {
            path: path.clone(),
            reason: format!("mask `{stem}` has no image"),
        });
    }
    let mut samples = Vec::with_capacity(images.len());
    for (stem, path) in &images {
        let image = read_gray(path)?;
        let mpath = &masks[stem];
        let mask = read_mask(mpath)?;
        if image.spatial() != (mask.height(), mask.width()) {
            return Err(Error::Data {
                path: mpath.clone(),
                reason: format!(
                    "mask is {}x{} but image is {}x{}",
                    mask.height(),
                    mask.width(),
                    image.spatial().0,
                    image.spatial().1
                ),
            });
        }
        let mut sample = Sample::new(stem.clone(), image, mask)?;
        if let Some(ipath) = instances.get(stem) {
            let labels = read_labels(ipath)?;
            if (labels.height(), labels.width()) != sample.shape() {
                return Err(Error::Data {
                    path: ipath.clone(),
                    reason: "instance map size differs from image".into(),
                });
            }
            sample.instances = Some(labels);
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn save(img: GrayImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Data {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// 8-bit PNG of values in `[0, 1]` (clamped, rounded).
pub fn write_gray_png(grid: &Grid2D<f64>, path: &Path) -> Result<()> {
    let (h, w) = grid.spatial();
    let px = grid.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    save(GrayImage::from_raw(w as u32, h as u32, px).expect("buffer size"), path)
}

/// 0/255 PNG.
pub fn write_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let px = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save(GrayImage::from_raw(mask.width() as u32, mask.height() as u32, px).expect("buffer size"), path)
}

/// Instance labels as gray levels (at most 255 instances).
pub fn write_labels_png(labels: &Labels, path: &Path) -> Result<()> {
    if labels.count() > 255 {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: format!("{} instances do not fit 8 bits", labels.count()),
        });
    }
    let px = labels.labels().iter().map(|&l| l as u8).collect();
    save(GrayImage::from_raw(labels.width() as u32, labels.height() as u32, px).expect("buffer size"), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_rgb(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let img = image::RgbImage::from_fn(w, h, |_, _| image::Rgb(rgb));
        img.save(path).unwrap();
    }

    #[test]
    fn rgb_uses_rec601_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_rgb(&p, 2, 2, [200, 100, 50]);
        let g = read_gray(&p).unwrap();
        let expected = (0.299 * 200.0 + 0.587 * 100.0 + 0.114 * 50.0) / 255.0;
        assert!((g.at2(1, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn folder_order_orphans_and_binarization() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for stem in ["b", "a", "c"] {
            write_gray_png(&Grid2D::full(&[4, 5], 0.5), &root.join(format!("images/{stem}.png"))).unwrap();
            let m = Mask::from_fn(4, 5, |_, _| true);
            write_mask_png(&m, &root.join(format!("masks/{stem}.png"))).unwrap();
        }
        let s = load_folder(root).unwrap();
        let ids: Vec<_> = s.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(s[0].mask.count(), 20);

        write_gray_png(&Grid2D::full(&[4, 5], 0.5), &root.join("images/orphan.png")).unwrap();
        let err = load_folder(root).unwrap_err().to_string();
        assert!(err.contains("orphan"), "{err}");
    }

    #[test]
    fn mask_size_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_gray_png(&Grid2D::full(&[4, 5], 0.5), &root.join("images/x.png")).unwrap();
        write_mask_png(&Mask::empty(5, 5), &root.join("masks/x.png")).unwrap();
        let err = load_folder(root).unwrap_err().to_string();
        assert!(err.contains("masks/x.png"), "{err}");
    }

    #[test]
    fn pgm_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        std::fs::write(&p, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let g = read_gray(&p).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }
}
