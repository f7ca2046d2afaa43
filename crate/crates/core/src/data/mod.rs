//! Samples, folder ingestion, synthetic datasets and splits.

pub mod io;
pub mod sdf;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Labels, Mask};
use crate::tensor::Grid2D;

pub use io::{load_folder, write_gray_png, write_labels_png, write_mask_png};
pub use sdf::exact_signed_distance;
pub use split::{load_split, split_fractions, Split};
pub use synth::{synth_generate, write_dataset, ShapeFamily, SynthSpec};

/// Extra rows/columns appended at the bottom/right of a padded grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub height: usize,
    pub width: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    pub fn none(height: usize, width: usize) -> Self {
        Self { height, width, bottom: 0, right: 0 }
    }

    /// Padding that brings `height × width` up to multiples of `multiple`.
    pub fn to_multiple(height: usize, width: usize, multiple: usize) -> Self {
        let up = |n: usize| n.div_ceil(multiple) * multiple - n;
        Self { height, width, bottom: up(height), right: up(width) }
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        (self.height + self.bottom, self.width + self.right)
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflective padding of a 2-D grid.
pub fn pad_reflect<T: Copy>(data: &[T], pad: &Padding) -> Vec<T> {
    let (ph, pw) = pad.padded_shape();
    let mut out = Vec::with_capacity(ph * pw);
    for i in 0..ph {
        let si = reflect(i, pad.height);
        for j in 0..pw {
            out.push(data[si * pad.width + reflect(j, pad.width)]);
        }
    }
    out
}

/// Crop a padded grid back to its original shape.
pub fn unpad<T: Copy>(data: &[T], pad: &Padding) -> Vec<T> {
    let (_, pw) = pad.padded_shape();
    let mut out = Vec::with_capacity(pad.height * pad.width);
    for i in 0..pad.height {
        out.extend_from_slice(&data[i * pw..i * pw + pad.width]);
    }
    out
}

pub fn pad_grid(grid: &Grid2D<f64>, pad: &Padding) -> Grid2D<f64> {
    let (ph, pw) = pad.padded_shape();
    Grid2D::from_vec(&[ph, pw], pad_reflect(grid.data(), pad)).expect("padded shape")
}

pub fn unpad_grid<T: crate::Real>(grid: &Grid2D<T>, pad: &Padding) -> Grid2D<T> {
    Grid2D::from_vec(&[pad.height, pad.width], unpad(grid.data(), pad)).expect("unpadded shape")
}

pub fn pad_mask(mask: &Mask, pad: &Padding) -> Mask {
    let (ph, pw) = pad.padded_shape();
    Mask::new(ph, pw, pad_reflect(mask.data(), pad)).expect("padded shape")
}

pub fn unpad_mask(mask: &Mask, pad: &Padding) -> Mask {
    Mask::new(pad.height, pad.width, unpad(mask.data(), pad)).expect("unpadded shape")
}

/// An image, its binary ground truth and optional instance labels, all in
/// the original (unpadded) geometry.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// Intensities in `[0, 1]`.
    pub image: Grid2D<f64>,
    pub mask: Mask,
    pub instances: Option<Labels>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Grid2D<f64>, mask: Mask) -> Result<Self> {
        let id = id.into();
        if image.spatial() != (mask.height(), mask.width()) {
            return Err(Error::Data {
                path: id.clone().into(),
                reason: format!(
                    "image is {:?} but mask is {}x{}",
                    image.spatial(),
                    mask.height(),
                    mask.width()
                ),
            });
        }
        Ok(Self { id, image, mask, instances: None })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image.spatial()
    }

    /// Ground-truth instances: stored labels, else 8-connected components.
    pub fn instance_labels(&self) -> Labels {
        self.instances
            .clone()
            .unwrap_or_else(|| crate::metrics::connected_components(&self.mask, crate::metrics::Connectivity::Eight))
    }
}
