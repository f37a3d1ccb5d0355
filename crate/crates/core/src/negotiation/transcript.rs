use super::ConsensusLevel;
use crate::domain::VehicleId;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Group(usize),
    Global,
}

impl Scope {
    pub fn group_index(self) -> Option<usize> {
        match self {
            Scope::Group(i) => Some(i),
            Scope::Global => None,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Group(i) => write!(f, "group {i}"),
            Scope::Global => f.write_str("global"),
        }
    }
}

/// One step of a negotiation, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Opinion {
        scope: Scope,
        round: u32,
        vehicle: VehicleId,
        precedences: Vec<(VehicleId, VehicleId)>,
    },
    Consensus {
        scope: Scope,
        round: u32,
        pair: (VehicleId, VehicleId),
        level: ConsensusLevel,
        votes: usize,
        agreeing: usize,
    },
    Resolution {
        scope: Scope,
        round: u32,
        precedences: Vec<(VehicleId, VehicleId)>,
    },
    MergeProposal {
        round: u32,
        order: Vec<(VehicleId, usize)>,
    },
    Violations {
        scope: Scope,
        round: u32,
        violations: Vec<String>,
    },
    BackendFailure {
        scope: Scope,
        round: u32,
        error: String,
    },
    Committed {
        scope: Scope,
        order: Vec<VehicleId>,
        rounds: u32,
        fallback: bool,
    },
}
