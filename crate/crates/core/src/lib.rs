//! Numerical laboratory for intersection and self-intersection local times
//! of transient lazy random walks on `Z^d`.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod capacity;
pub mod error;
pub mod experiments;
pub mod green;
pub mod lattice;
pub mod moments;
pub mod rate;
pub mod sets;
pub mod stats;
pub mod tilt;
pub mod trail;

pub use capacity::{CapacityMethod, EquilibriumSolution};
pub use error::{Error, Result};
pub use experiments::{Artifact, ExperimentConfig, ExperimentKind};
pub use green::GreenOracle;
pub use lattice::{Horizon, LatticePoint, LocalTimeField, StreamKey};
pub use moments::{InterpolatedIntersection, TailEstimate};
pub use rate::{IntersectionOperator, ProfileFunction, RateResult};
pub use tilt::{HarmonicTilt, WeightedSample};
pub use trail::{EdgeOccupation, TrailStock};
