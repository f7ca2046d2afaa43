//! Dense row-major arrays.
//!
//! Rank-2 tensors hold image-domain fields (image, level set, parameter
//! maps); rank-4 tensors hold `batch × channel × height × width`
//! network activations. Spatial operations always act on the trailing two
//! dimensions so the same code serves both.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// A 2D scalar field over the image domain.
pub type Grid2D<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `h × w` field from a function of `(row, col)`.
    pub fn from_fn2(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        Self {
            shape: vec![h, w],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(height, width)` of the trailing two dimensions.
    pub fn spatial(&self) -> (usize, usize) {
        let r = self.shape.len();
        assert!(r >= 2, "tensor of rank {r} has no spatial dimensions");
        (self.shape[r - 2], self.shape[r - 1])
    }

    /// Number of independent `h × w` planes.
    pub fn planes(&self) -> usize {
        let (h, w) = self.spatial();
        if h * w == 0 {
            0
        } else {
            self.data.len() / (h * w)
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        let (_, w) = self.spatial();
        self.data[i * w + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        let (_, w) = self.spatial();
        self.data[i * w + j] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Index of the first NaN or infinite element.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    /// Copy of plane `p` (in row-major leading order) as a rank-2 field.
    pub fn plane(&self, p: usize) -> Self {
        let (h, w) = self.spatial();
        Self {
            shape: vec![h, w],
            data: self.data[p * h * w..(p + 1) * h * w].to_vec(),
        }
    }

    /// Stacks equally-sized rank-2 fields into `[n, 1, h, w]`.
    pub fn stack_planes(planes: &[Self]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("stack_planes", "no planes"))?;
        let (h, w) = first.spatial();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack_planes",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![planes.len(), 1, h, w],
            data,
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.spatial(), (2, 3));
        assert_eq!(t.planes(), 1);
    }

    #[test]
    fn planes_round_trip() {
        let a = Tensor::<f32>::from_fn2(3, 2, |i, j| (i * 2 + j) as f32);
        let b = a.map(|x| -x);
        let s = Tensor::stack_planes(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 3, 2]);
        assert_eq!(s.plane(0), a);
        assert_eq!(s.plane(1), b);
    }
}
