//! Adaptive hierarchical Poincare-Steklov (HPS) solver for variable
//! coefficient elliptic problems on rectangles.

pub mod adaptivity;
pub mod dense;
pub mod error;
pub mod field;
pub mod leafops;
pub mod mergeops;
pub mod meshtree;
pub mod problems;
pub mod scalar;
pub mod solver;
pub mod spectral1d;

pub use error::{HpsError, Result};
pub use scalar::{c64, Scalar};

/// Run dense kernels single-threaded, so results do not depend on the
/// machine's core count.
pub fn use_sequential_kernels() {
    faer::set_global_parallelism(faer::Par::Seq);
}
