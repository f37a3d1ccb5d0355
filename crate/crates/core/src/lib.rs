//! Cooperative pass-order decisions for connected vehicles at unsignalized
//! intersections.
//!
//! The pipeline quantifies pairwise kinematic influence between vehicles,
//! groups strongly coupled vehicles with motif-based spectral clustering,
//! negotiates a pass order inside and across groups through a pluggable
//! [`negotiation::NegotiatorBackend`], and turns the agreed order into
//! safety-gap constrained crossing times. The [`sim`] module hosts a
//! deterministic microsimulation that compares individual decisions (IVD),
//! intra-group negotiation (IGN) and intra- plus inter-group negotiation
//! (IIGN).

pub mod config;
pub mod domain;
pub mod experiment;
pub mod geometry;
pub mod grouping;
pub mod influence;
pub mod llm;
pub mod metrics;
pub mod negotiation;
pub mod planning;
pub mod rng;
pub mod sim;

pub use config::{ConstraintMode, GroupingConfig, PetMode, ScenarioConfig};
pub use domain::{MethodKind, RouteId, Vec2, VehicleId, VehicleState};
