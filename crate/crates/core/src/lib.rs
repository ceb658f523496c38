//! Finite-element simulator for cardiac nonlinear elastodynamics.
//!
//! The library couples a total-Lagrangian solid model of the myocardium
//! (quadratic tetrahedra, fiber-reinforced hyperelastic materials, active
//! stress) to lumped-parameter windkessel circulations, one per ventricular
//! blood pool. Boundary conditions on the epicardium model the pericardium as
//! a spring/dashpot layer acting along the local surface normal, so the heart
//! may slide tangentially but is held in the radial direction.
//!
//! Modules follow the pipeline order: [`mesh`] builds or loads geometry,
//! [`fibers`] orients the microstructure, [`materials`] and [`activation`]
//! provide pointwise stress, [`boundary`] and [`windkessel`] close the
//! problem, [`assembly`] and [`solver`] discretize and march it in time, and
//! [`metrics`] evaluates the result against imaging-derived quantities.
//!
//! Pointwise physics ([`materials`], [`activation`], [`windkessel`],
//! [`timeint`]) is generic over the scalar type through [`scalar::Scalar`];
//! the spatial discretization and the sparse linear algebra are pinned to
//! [`Real`].

pub mod activation;
pub mod assembly;
pub mod boundary;
pub mod config;
pub mod error;
pub mod fibers;
pub mod linsolve;
pub mod materials;
pub mod mesh;
pub mod metrics;
pub mod output;
pub mod scalar;
pub mod scenarios;
pub mod solver;
#[cfg(test)]
pub(crate) mod test_util;
pub mod timeint;
pub mod units;
pub mod windkessel;

/// Scalar type used by the spatial discretization and the linear solver.
pub type Real = f64;

/// 3-vector over [`Real`].
pub type Vec3 = nalgebra::Vector3<Real>;

/// 3x3 matrix over [`Real`].
pub type Mat3 = nalgebra::Matrix3<Real>;

pub use error::Error;

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
