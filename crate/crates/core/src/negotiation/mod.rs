//! Pass-order negotiation inside and across vehicle groups.
//!
//! Each group member states pairwise precedences for every conflict pair, the
//! opinions are classified by consensus level, disputed pairs are resolved,
//! and the result is validated and linearized. Group orders are then merged
//! into one global order. Backends are pluggable: [`RuleBackend`] is the
//! deterministic first-come-first-served oracle, and the `llm` module hosts a
//! remote chat backend plus a replay fixture.

mod context;
mod protocol;
mod rule;
mod transcript;

pub use context::{conflict_pairs, ConflictPair, MemberInfo, NegotiationContext};
pub use protocol::{
    classify_consensus, fcfs_order, generate_opinions, inter_group_order, intra_group_order, kway_merge, linearize,
    resolve_divergence, validate_merge, validate_order, validate_precedences, ConsensusTally, Violation,
    MAX_RESOLVE_ATTEMPTS,
};
pub use rule::RuleBackend;
pub use transcript::{Scope, TranscriptEvent};

use crate::domain::VehicleId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One vehicle's statement that `first` should cross before `second`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecedencePreference {
    pub first: VehicleId,
    pub second: VehicleId,
    pub stated_by: VehicleId,
    pub rationale: String,
}

impl PrecedencePreference {
    pub fn edge(&self) -> (VehicleId, VehicleId) {
        (self.first, self.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusLevel {
    Exact,
    Basic,
    None,
}

/// A validated total order together with how it was reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassOrder {
    pub ordered_ids: Vec<VehicleId>,
    pub scope: Scope,
    pub rounds_used: u32,
    pub backend_name: String,
    pub fallback: bool,
}

/// Failure reported by a backend for one request.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{backend}: {message}")]
pub struct BackendError {
    pub backend: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NegotiationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("opinion of vehicle {vehicle} does not cover pair ({first}, {second}) exactly once")]
    IncompleteOpinion {
        vehicle: VehicleId,
        first: VehicleId,
        second: VehicleId,
    },
    #[error("disputed pairs could not be resolved after {attempts} attempts")]
    UnresolvableDispute { attempts: u32 },
    #[error("precedences contain a cycle")]
    Cyclic,
}

/// Source of negotiation decisions.
///
/// Implementations must not retain per-context state that would make equal
/// requests return different answers unless that is their purpose (scripted
/// test doubles).
pub trait NegotiatorBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Precedences `ego` proposes for every conflict pair in `ctx`.
    fn opinion(&self, ctx: &NegotiationContext, ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError>;

    /// One precedence per disputed pair, compatible with `agreed`.
    fn resolve(
        &self,
        ctx: &NegotiationContext,
        disputed: &[(VehicleId, VehicleId)],
        agreed: &[(VehicleId, VehicleId)],
    ) -> Result<Vec<PrecedencePreference>, BackendError>;

    /// Global order as `(vehicle, group index)` pairs.
    fn merge(&self, intra: &[PassOrder], ctx: &NegotiationContext) -> Result<Vec<(VehicleId, usize)>, BackendError>;
}
