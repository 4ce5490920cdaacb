//! Numerical laboratory for geodesic flows on implicit hypersurfaces of
//! Euclidean space.

pub mod annulus;
pub mod error;
pub mod expr;
pub mod fermi;
pub mod flow;
pub mod integrator;
pub mod jets;
pub mod perturbation;
pub mod poincare;
pub mod scalar;
pub mod surface;
pub mod variational;

pub use error::{GeoError, Result};
pub use flow::PhaseState;
pub use surface::{Field, Surface};
