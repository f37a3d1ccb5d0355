use crate::config::ScenarioConfig;
use crate::domain::{MethodKind, RouteId, Vec2, VehicleId};
use crate::negotiation::{Scope, TranscriptEvent};
use crate::planning::ScheduleEntry;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "crossnego.trace.v1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace has no header line")]
    MissingHeader,
    #[error("unsupported trace schema {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleInfo {
    pub id: VehicleId,
    pub route: RouteId,
    pub route_label: String,
    pub initial_arc: f64,
    pub route_length: f64,
    pub v0: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub method: MethodKind,
    pub backend: String,
    pub n_vehicles: usize,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub vehicles: Vec<VehicleInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub id: VehicleId,
    pub arc: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub accel: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub step: u64,
    pub vehicles: Vec<VehicleSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Influence {
        time: f64,
        ids: Vec<VehicleId>,
        direct: Vec<Vec<f64>>,
        cumulative: Vec<Vec<f64>>,
    },
    GroupPartition {
        time: f64,
        groups: Vec<Vec<VehicleId>>,
    },
    NegotiationRound {
        time: f64,
        transcript: TranscriptEvent,
    },
    OrderCommitted {
        time: f64,
        scope: Scope,
        order: Vec<VehicleId>,
        rounds: u32,
        fallback: bool,
    },
    Schedule {
        time: f64,
        scope: Scope,
        entries: Vec<ScheduleEntry>,
    },
    ConflictCrossing {
        time: f64,
        vehicle: VehicleId,
        route: RouteId,
        conflict_id: usize,
        speed: f64,
    },
    Collision {
        time: f64,
        a: VehicleId,
        b: VehicleId,
        position: Vec2,
        distance: f64,
    },
    FallbackUsed {
        time: f64,
        scope: Option<Scope>,
        reason: String,
    },
    VehicleCompleted {
        time: f64,
        vehicle: VehicleId,
    },
}

impl SimEvent {
    pub fn time(&self) -> f64 {
        match self {
            SimEvent::Influence { time, .. }
            | SimEvent::GroupPartition { time, .. }
            | SimEvent::NegotiationRound { time, .. }
            | SimEvent::OrderCommitted { time, .. }
            | SimEvent::Schedule { time, .. }
            | SimEvent::ConflictCrossing { time, .. }
            | SimEvent::Collision { time, .. }
            | SimEvent::FallbackUsed { time, .. }
            | SimEvent::VehicleCompleted { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub header: Option<TraceHeader>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<SimEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Snapshot(Snapshot),
    Event(SimEvent),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a TraceHeader),
    Snapshot(&'a Snapshot),
    Event(&'a SimEvent),
}

impl SimTrace {
    pub fn header(&self) -> &TraceHeader {
        self.header.as_ref().expect("trace header")
    }

    pub fn collided(&self) -> bool {
        self.events.iter().any(|e| matches!(e, SimEvent::Collision { .. }))
    }

    pub fn end_time(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.time)
    }

    /// Lines in time order: each snapshot follows the events up to its time.
    fn lines(&self) -> Vec<LineRef<'_>> {
        let mut out = Vec::with_capacity(1 + self.snapshots.len() + self.events.len());
        if let Some(h) = &self.header {
            out.push(LineRef::Header(h));
        }
        let mut events = self.events.iter().peekable();
        for snap in &self.snapshots {
            while let Some(e) = events.next_if(|e| e.time() <= snap.time + 1e-9) {
                out.push(LineRef::Event(e));
            }
            out.push(LineRef::Snapshot(snap));
        }
        out.extend(events.map(LineRef::Event));
        out
    }

    pub fn to_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_reader(r: impl BufRead) -> Result<SimTrace, TraceError> {
        let mut trace = SimTrace::default();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: n + 1, source })? {
                Line::Header(h) => {
                    if h.schema != TRACE_SCHEMA {
                        return Err(TraceError::Schema(h.schema));
                    }
                    trace.header = Some(h);
                }
                Line::Snapshot(s) => trace.snapshots.push(s),
                Line::Event(e) => trace.events.push(e),
            }
        }
        if trace.header.is_none() {
            return Err(TraceError::MissingHeader);
        }
        Ok(trace)
    }
}

pub fn write_trace(trace: &SimTrace, path: &Path) -> Result<(), TraceError> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.to_writer(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<SimTrace, TraceError> {
    SimTrace::from_reader(BufReader::new(File::open(path)?))
}
