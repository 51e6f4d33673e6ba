//! Numerical laboratory for the harmonic map heat flow into round spheres.
//!
//! The crate simulates the flow on a flat torus, evaluates exact singular
//! model solutions (cones, quasistatic truncations, shrinking profiles),
//! and measures the quantitative-stratification machinery built on top of
//! them: annulus energies of the selfsimilarity defect, scale bit-vectors,
//! strata membership, regularity scales, recursive coverings and
//! Minkowski-slope fits of tubular-neighborhood volumes.

pub mod analysis;
pub mod analytic;
pub mod candidates;
pub mod config;
pub mod energies;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod profile;
pub mod report;
pub mod solver;
pub mod strata;
pub mod target;
pub mod util;
pub mod windows;

pub use error::{Error, Result};
pub use geometry::{GridSpec, ParabolicBall, SpaceTimePoint};
pub use solver::{FlowTrajectory, Snapshot};
