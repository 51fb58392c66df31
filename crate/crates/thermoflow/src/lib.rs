//! Simulation and verification toolkit for thermostat flows on the square
//! 2-torus: flow integration on the unit circle bundle, Jacobi fields and
//! conjugate points, the Hopf limit construction of a bounded Riccati
//! solution with explicit comparison bounds, gauge normalization of the
//! external field, and Liouville-measure quadrature of the rigidity
//! identities.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod fields;
pub mod gauge;
pub mod hopf;
pub mod jacobi;
pub mod ode;

pub use dynamics::{evolve, exp_map, PhaseState, ThermostatSystem, Trajectory};
pub use fields::{ConformalMetric, FieldTerm, SpectralScalarField, SpectralVectorField};
