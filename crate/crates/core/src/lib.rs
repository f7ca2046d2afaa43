pub mod acm;
pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod error;
pub mod metrics;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Grid2D, Tensor};
