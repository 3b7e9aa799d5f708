//! Pseudo-spectral laboratory for inertial manifolds of prepared Navier-Stokes systems on
//! the torus.

pub mod cone_sac;
pub mod cutoff;
pub mod error;
pub mod evolution;
pub mod gap_search;
pub mod harness;
mod krylov;
pub mod manifold;
pub mod scalar;
pub mod operators;
pub mod spectral_field;
pub mod stationary;

pub use error::{Error, Result};
pub use scalar::Real;
pub use spectral_field::{GridSpec, RawSpectrum, SpectralField, WaveVector};

/// Double-precision field.
pub type Field = SpectralField<f64>;
/// Single-precision field.
pub type Field32 = SpectralField<f32>;
