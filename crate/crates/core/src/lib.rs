//! Inter-well switching rates of the two-photon-driven Kerr oscillator.
//!
//! The crate builds the parity-resolved spectrum, turns it into manifold
//! transition rates and a closed-form switching rate, cross-checks that rate
//! against the slow eigenvalue of the Lindbladian, and carries the
//! semiclassical splitting formulas used as oracles.

pub mod analysis;
pub mod error;
pub mod fock;
pub mod lindblad;
pub mod quadrature;
pub mod rates;
pub mod scalar;
pub mod special;
pub mod spectrum;
pub mod wkb;

pub use error::{Error, Result};
pub use fock::{FockSpace, Operator, StateVector, SystemParams};
pub use spectrum::{solve_spectrum, Manifold, ManifoldSpectrum};

pub use num_complex::Complex64;

/// Double-precision instantiations of the generic pieces.
pub type RateMatrices64 = rates::RateMatrices<f64>;
pub type QuasiEquilibrium64 = rates::QuasiEquilibrium<f64>;
pub type SemiAnalytic64 = rates::SemiAnalyticResult<f64>;
pub type RescaledParams64 = wkb::RescaledParams<f64>;
pub type Quadrature64 = quadrature::Quadrature<f64>;

/// Single-precision instantiations, for quick scans where 1e-7 relative is enough.
pub type RateMatrices32 = rates::RateMatrices<f32>;
pub type SemiAnalytic32 = rates::SemiAnalyticResult<f32>;
pub type RescaledParams32 = wkb::RescaledParams<f32>;
