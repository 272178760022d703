pub mod error;
pub mod gradcheck;
pub mod io;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod resample;
pub mod sphere;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Labels, Tensor, IGNORE_INDEX};
