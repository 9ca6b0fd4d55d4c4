//! Segmental phase of complex matrices and MIMO LTI systems, and phase-based
//! stability certificates for cyclic feedback loops.
//!
//! ```
//! use num_complex::Complex64;
//! use phasekit::matrix_phase::segmental_phase;
//! use phasekit::ComplexSquareMatrix;
//!
//! let a = ComplexSquareMatrix::diag(&[Complex64::new(1.0, 0.0), Complex64::new(100.0, 0.0)]);
//! let sp = segmental_phase(&a, 1e-4).unwrap();
//! assert!((sp.radius() - (20.0f64 / 101.0).acos()).abs() < 1e-4);
//! ```
//!
//! See the guide in `book/` for a walk through each module.

pub mod error;
pub mod interval;
pub mod linalg;
pub mod lti;
pub mod matrix_phase;
pub mod oracles;
pub mod stability;

pub use error::{PhaseError, Result};
pub use interval::PhaseInterval;
pub use matrix_phase::ComplexSquareMatrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/matrix_phase.md")]
    mod matrix_phase {}
    #[doc = include_str!("../../../book/src/system_phase.md")]
    mod system_phase {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
