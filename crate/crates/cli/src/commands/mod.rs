//! One module per subcommand.

pub mod eval;
pub mod evolve;
pub mod gradcheck;
pub mod segment;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use contour_core::Grid2D;

use crate::{CliError, CliResult};

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Row-major little-endian f64 dump of a grid.
pub fn write_raw(grid: &Grid2D<f64>, path: &Path) -> CliResult<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 8);
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, bytes)
}

/// Inverse of [`write_raw`] for an `h × w` grid.
pub fn read_raw(path: &Path, h: usize, w: usize) -> CliResult<Grid2D<f64>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    if bytes.len() != h * w * 8 {
        return Err(CliError::io(format!(
            "{}: {} bytes, expected {h}x{w} little-endian f64 ({} bytes)",
            path.display(),
            bytes.len(),
            h * w * 8
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Grid2D::from_vec(&[h, w], data)?)
}

/// Min-max rescale to `[0, 1]` for viewing; constant maps become 0.5.
pub(crate) fn normalize(grid: &Grid2D<f64>) -> Grid2D<f64> {
    let lo = grid.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return grid.map(|_| 0.5);
    }
    grid.map(|v| (v - lo) / (hi - lo))
}

/// A run directory resolves to its best checkpoint; anything else is
/// taken as a checkpoint path.
pub(crate) fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        let nested = path.join("checkpoints").join("best");
        if nested.with_extension("json").exists() {
            return nested;
        }
        return path.join("best");
    }
    path.to_path_buf()
}

/// Images of `dir/images` if that exists, else of `dir` itself.
pub(crate) fn image_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("images");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Masks of `dir/masks` if that exists, else of `dir` itself.
pub(crate) fn mask_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("masks");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}
