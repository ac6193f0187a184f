//! Fourier-domain model-based iterative reconstruction for parallel-beam
//! tomography.

pub mod error;
pub mod fft;
pub mod geometry;
pub mod multires;
pub mod nufft;
pub mod phantom;
pub mod qggmrf;
pub mod radon;
pub mod solver;
pub mod toeplitz;

pub use error::{Result, TomoError};
