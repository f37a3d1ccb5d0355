//! Safety, efficiency and negotiation metrics computed from traces.

use crate::config::PetMode;
use crate::domain::{MethodKind, RouteId, VehicleId};
use crate::negotiation::Scope;
use crate::sim::{SimEvent, SimTrace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// One conflict-point passage read back from a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Passage {
    route: RouteId,
    time: f64,
    speed: f64,
    length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PetSample {
    pub conflict_id: usize,
    pub first: VehicleId,
    pub second: VehicleId,
    pub pet: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDelay {
    pub vehicle: VehicleId,
    pub delay: f64,
    /// The vehicle had not finished its route when the run stopped.
    pub censored: bool,
}

/// Negotiation effort for one committed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Merge across groups rather than negotiation inside one.
    pub global: bool,
    pub group_size: usize,
    pub rounds: u32,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: MethodKind,
    pub n_vehicles: usize,
    pub seed: u64,
    pub collided: bool,
    pub collisions: usize,
    pub pet_values: Vec<PetSample>,
    pub avg_speed: f64,
    pub delays: Vec<VehicleDelay>,
    pub negotiation_rounds: Vec<RoundRecord>,
    pub fallback_count: usize,
}

fn passages(trace: &SimTrace) -> BTreeMap<usize, Vec<(VehicleId, Passage)>> {
    let lengths: BTreeMap<VehicleId, f64> = trace.header().vehicles.iter().map(|v| (v.id, v.length)).collect();
    let mut out: BTreeMap<usize, Vec<(VehicleId, Passage)>> = BTreeMap::new();
    for e in &trace.events {
        if let SimEvent::ConflictCrossing {
            time,
            vehicle,
            route,
            conflict_id,
            speed,
        } = e
        {
            let list = out.entry(*conflict_id).or_default();
            if list.iter().any(|(v, _)| v == vehicle) {
                continue;
            }
            list.push((
                *vehicle,
                Passage {
                    route: *route,
                    time: *time,
                    speed: *speed,
                    length: lengths.get(vehicle).copied().unwrap_or(0.0),
                },
            ));
        }
    }
    out
}

fn pet_between(first: Passage, second: Passage, mode: PetMode) -> f64 {
    let start = match mode {
        PetMode::RearToFront if first.speed > 1e-9 => first.time + first.length / first.speed,
        // A stationary rear never clears the point.
        PetMode::RearToFront => return 0.0,
        PetMode::FrontToFront => first.time,
    };
    (second.time - start).max(0.0)
}

/// PET of two vehicles at one conflict point, or `None` unless both crossed.
pub fn post_encroachment_time(
    trace: &SimTrace,
    pair: (VehicleId, VehicleId),
    conflict_id: usize,
    mode: PetMode,
) -> Option<f64> {
    let all = passages(trace);
    let list = all.get(&conflict_id)?;
    let find = |id: VehicleId| list.iter().find(|(v, _)| *v == id).map(|(_, p)| *p);
    let (a, b) = (find(pair.0)?, find(pair.1)?);
    Some(if a.time <= b.time {
        pet_between(a, b, mode)
    } else {
        pet_between(b, a, mode)
    })
}

/// PET for every pair of vehicles on different routes that both crossed a
/// conflict point.
pub fn all_pets(trace: &SimTrace, mode: PetMode) -> Vec<PetSample> {
    let mut out = Vec::new();
    for (cp, list) in passages(trace) {
        let mut sorted = list;
        sorted.sort_by(|a, b| a.1.time.total_cmp(&b.1.time).then(a.0.cmp(&b.0)));
        for (i, (first, p)) in sorted.iter().enumerate() {
            for (second, q) in sorted[i + 1..].iter().filter(|(_, q)| q.route != p.route) {
                out.push(PetSample {
                    conflict_id: cp,
                    first: *first,
                    second: *second,
                    pet: pet_between(*p, *q, mode),
                });
            }
        }
    }
    out
}

/// Completion time minus the time the route remainder takes at the initial
/// speed, floored at zero.
pub fn delay(trace: &SimTrace, vehicle: VehicleId) -> Option<VehicleDelay> {
    let header = trace.header();
    let info = header.vehicles.iter().find(|v| v.id == vehicle)?;
    let free_flow = if info.v0 > 1e-9 {
        (info.route_length - info.initial_arc) / info.v0
    } else {
        0.0
    };
    let done = trace.events.iter().find_map(|e| match e {
        SimEvent::VehicleCompleted { time, vehicle: v } if *v == vehicle => Some(*time),
        _ => None,
    });
    let (finish, censored) = match done {
        Some(t) => (t, false),
        None => (header.config.t_limit, true),
    };
    Some(VehicleDelay {
        vehicle,
        delay: (finish - free_flow).max(0.0),
        censored,
    })
}

/// Mean over vehicles of distance covered divided by time on the road.
pub fn avg_speed(trace: &SimTrace) -> f64 {
    let header = trace.header();
    if header.vehicles.is_empty() {
        return 0.0;
    }
    let end = trace.end_time();
    let total: f64 = header
        .vehicles
        .iter()
        .map(|info| {
            let done = trace.events.iter().find_map(|e| match e {
                SimEvent::VehicleCompleted { time, vehicle } if *vehicle == info.id => Some(*time),
                _ => None,
            });
            match done {
                Some(t) if t > 0.0 => (info.route_length - info.initial_arc) / t,
                Some(_) => info.v0,
                None => {
                    let last = trace
                        .snapshots
                        .last()
                        .and_then(|s| s.vehicles.iter().find(|v| v.id == info.id))
                        .map_or(info.initial_arc, |v| v.arc);
                    if end > 0.0 {
                        (last - info.initial_arc) / end
                    } else {
                        info.v0
                    }
                }
            }
        })
        .sum();
    total / header.vehicles.len() as f64
}

pub fn summarize(trace: &SimTrace) -> RunSummary {
    let header = trace.header();
    let mode = header.config.pet_mode;
    let mut rounds = Vec::new();
    let mut fallback_count = 0;
    let mut collisions = 0;
    for e in &trace.events {
        match e {
            SimEvent::OrderCommitted {
                scope,
                order,
                rounds: r,
                fallback,
                ..
            } => rounds.push(RoundRecord {
                global: *scope == Scope::Global,
                group_size: order.len(),
                rounds: *r,
                fallback: *fallback,
            }),
            SimEvent::FallbackUsed { .. } => fallback_count += 1,
            SimEvent::Collision { .. } => collisions += 1,
            _ => {}
        }
    }
    RunSummary {
        method: header.method,
        n_vehicles: header.n_vehicles,
        seed: header.seed,
        collided: collisions > 0,
        collisions,
        pet_values: all_pets(trace, mode),
        avg_speed: avg_speed(trace),
        delays: header.vehicles.iter().filter_map(|v| delay(trace, v.id)).collect(),
        negotiation_rounds: rounds,
        fallback_count,
    }
}

impl RunSummary {
    pub fn min_pet(&self) -> Option<f64> {
        self.pet_values.iter().map(|p| p.pet).min_by(f64::total_cmp)
    }

    pub fn mean_delay(&self) -> f64 {
        mean(&self.delays.iter().map(|d| d.delay).collect::<Vec<_>>()).unwrap_or(0.0)
    }

    pub fn rounds_total(&self) -> u64 {
        self.negotiation_rounds.iter().map(|r| u64::from(r.rounds)).sum()
    }

    pub fn row(&self) -> RunRow {
        RunRow {
            method: self.method,
            n_vehicles: self.n_vehicles,
            seed: self.seed,
            collided: self.collided,
            min_pet: self.min_pet(),
            mean_speed: self.avg_speed,
            mean_delay: self.mean_delay(),
            rounds_total: self.rounds_total(),
            fallbacks: self.fallback_count,
        }
    }
}

/// Per-run CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: MethodKind,
    pub n_vehicles: usize,
    pub seed: u64,
    pub collided: bool,
    pub min_pet: Option<f64>,
    pub mean_speed: f64,
    pub mean_delay: f64,
    pub rounds_total: u64,
    pub fallbacks: usize,
}

/// Per (method, vehicle count) statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: MethodKind,
    pub n_vehicles: usize,
    pub runs: usize,
    pub collided_runs: usize,
    pub collision_rate: f64,
    pub pet_count: usize,
    pub pet_min: Option<f64>,
    pub pet_mean: Option<f64>,
    pub pet_median: Option<f64>,
    pub pet_max: Option<f64>,
    pub mean_speed: f64,
    pub mean_delay: f64,
    pub rounds_mean: Option<f64>,
    pub rounds_min: Option<u32>,
    pub rounds_max: Option<u32>,
    pub fallbacks: usize,
}

/// Sum of the values in ascending order, so the result does not depend on
/// input order.
fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

pub fn aggregate(runs: &[RunSummary]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(MethodKind, usize), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.method, r.n_vehicles)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, n_vehicles), cell)| {
            let pets: Vec<f64> = cell.iter().flat_map(|r| r.pet_values.iter().map(|p| p.pet)).collect();
            let rounds: Vec<u32> = cell.iter().flat_map(|r| r.negotiation_rounds.iter().map(|x| x.rounds)).collect();
            let collided_runs = cell.iter().filter(|r| r.collided).count();
            AggregateRow {
                method,
                n_vehicles,
                runs: cell.len(),
                collided_runs,
                collision_rate: collided_runs as f64 / cell.len() as f64,
                pet_count: pets.len(),
                pet_min: pets.iter().copied().min_by(f64::total_cmp),
                pet_mean: mean(&pets),
                pet_median: median(&pets),
                pet_max: pets.iter().copied().max_by(f64::total_cmp),
                mean_speed: mean(&cell.iter().map(|r| r.avg_speed).collect::<Vec<_>>()).unwrap_or(0.0),
                mean_delay: mean(&cell.iter().map(|r| r.mean_delay()).collect::<Vec<_>>()).unwrap_or(0.0),
                rounds_mean: mean(&rounds.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()),
                rounds_min: rounds.iter().copied().min(),
                rounds_max: rounds.iter().copied().max(),
                fallbacks: cell.iter().map(|r| r.fallback_count).sum(),
            }
        })
        .collect()
}

/// Intra-group round statistics keyed by group size.
pub fn rounds_by_group_size(runs: &[RunSummary]) -> BTreeMap<usize, (f64, u32, u32)> {
    let mut by: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.negotiation_rounds).filter(|r| !r.global) {
        by.entry(r.group_size).or_default().push(r.rounds);
    }
    by.into_iter()
        .map(|(size, v)| {
            let m = mean(&v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()).unwrap_or(0.0);
            (size, (m, *v.iter().min().unwrap(), *v.iter().max().unwrap()))
        })
        .collect()
}

pub fn write_runs_csv(runs: &[RunSummary], w: impl Write) -> csv::Result<()> {
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by(|a, b| (a.method, a.n_vehicles, a.seed).cmp(&(b.method, b.n_vehicles, b.seed)));
    let mut out = csv::Writer::from_writer(w);
    for r in sorted {
        out.serialize(r.row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
