//! Numerical laboratory for the retarded relativistic Vlasov-Maxwell system.
//!
//! The crate evaluates retarded electromagnetic fields of compactly supported
//! plasma sources, extracts the radiation field at future null infinity,
//! computes the Bondi-type mass of the plasma on outgoing light cones and
//! checks the algebraic identities and conservation laws satisfied by these
//! quantities as numerical residuals.
//!
//! Units are Gaussian with the speed of light equal to one.
//!
//! Module map:
//! - [`geometry`]: quadrature rules on the sphere, balls and shells, light-cone coordinates.
//! - [`sources`]: charge and current densities from analytic models or particle ensembles.
//! - [`fields`]: retarded (and, as a negative control, advanced) field evaluation.
//! - [`radiation`]: the `M`, `N` vectors, the radiation field and its identities.
//! - [`energetics`]: cone energy integrals, Bondi mass, fluxes and balance residuals.
//! - [`dynamics`]: characteristics and the self-consistent slab iteration.

pub mod dynamics;
pub mod energetics;
pub mod error;
pub mod extrapolate;
pub mod fields;
pub mod geometry;
pub mod radiation;
pub mod sources;

pub use error::{Error, Result};
pub use geometry::Vec3;

/// Formats a float so that parsing the text gives back the same bits.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:?}")
}
