//! Fixed-step intersection world and the method runners.

mod runner;
mod scenario;
mod trace;

pub use runner::{run, run_scenario, Controller};
pub use scenario::generate_scenario;
pub use trace::{
    read_trace, write_trace, SimEvent, SimTrace, Snapshot, TraceError, TraceHeader, VehicleInfo, VehicleSnapshot,
    TRACE_SCHEMA,
};

use crate::config::ScenarioConfig;
use crate::domain::{Vec2, VehicleId, VehicleState};
use crate::geometry::{Geometry, PathKey};
use crate::planning::Limits;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place vehicle {vehicle} after {attempts} attempts")]
    PlacementFailure { vehicle: usize, attempts: usize },
    #[error("scenario is empty")]
    EmptyScenario,
}

/// Resampling budget per vehicle during scenario generation.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Contact threshold as a fraction of vehicle length.
pub const COLLISION_FACTOR: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct SimVehicle {
    pub state: VehicleState,
    pub completed: bool,
    /// Conflict ids already passed, with interpolated crossing times.
    pub crossed: Vec<(usize, f64)>,
    pub last_accel: f64,
}

/// What happened during one integration step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Crossing {
        time: f64,
        vehicle: VehicleId,
        conflict_id: usize,
        speed: f64,
    },
    Completed {
        time: f64,
        vehicle: VehicleId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub a: VehicleId,
    pub b: VehicleId,
    pub position: Vec2,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub time: f64,
    pub steps: u64,
    pub vehicles: Vec<SimVehicle>,
    pub geometry: Geometry,
    pub limits: Limits,
    contacts: BTreeSet<(VehicleId, VehicleId)>,
}

impl World {
    pub fn new(geometry: Geometry, states: Vec<VehicleState>, limits: Limits) -> World {
        let vehicles = states
            .into_iter()
            .map(|state| SimVehicle {
                state,
                completed: false,
                crossed: Vec::new(),
                last_accel: 0.0,
            })
            .collect();
        World {
            time: 0.0,
            steps: 0,
            vehicles,
            geometry,
            limits,
            contacts: BTreeSet::new(),
        }
    }

    pub fn from_config(config: &ScenarioConfig, geometry: Geometry, states: Vec<VehicleState>) -> World {
        World::new(
            geometry,
            states,
            Limits {
                a_min: config.a_min,
                a_max: config.a_max,
                v_max: config.v_max,
            },
        )
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&SimVehicle> {
        self.vehicles.iter().find(|v| v.state.id == id)
    }

    pub fn all_completed(&self) -> bool {
        self.vehicles.iter().all(|v| v.completed)
    }

    /// Advances every active vehicle by one step with semi-implicit Euler.
    ///
    /// `commands[k]` is the acceleration of `vehicles[k]`; completed vehicles
    /// ignore theirs. Time is kept as `steps * dt` so it never drifts.
    pub fn step(&mut self, commands: &[f64], dt: f64) -> Vec<StepEvent> {
        assert_eq!(commands.len(), self.vehicles.len(), "one command per vehicle");
        let t0 = self.time;
        let mut events = Vec::new();
        for (v, &a) in self.vehicles.iter_mut().zip(commands) {
            if v.completed {
                continue;
            }
            let route = self.geometry.route(v.state.route);
            let s0 = v.state.arc_position;
            let speed = (v.state.speed() + a * dt).clamp(0.0, self.limits.v_max);
            let s1 = s0 + speed * dt;
            v.last_accel = a;
            for &(cp, arc) in self.geometry.conflicts_on(v.state.route) {
                if arc > s0 && arc <= s1 {
                    let time = t0 + dt * (arc - s0) / (s1 - s0);
                    v.crossed.push((cp, time));
                    events.push(StepEvent::Crossing {
                        time,
                        vehicle: v.state.id,
                        conflict_id: cp,
                        speed,
                    });
                }
            }
            let length = route.length();
            let arc = s1.min(length);
            let (position, tangent) = route.centerline.sample(arc);
            v.state.arc_position = arc;
            v.state.position = position;
            v.state.velocity = tangent * speed;
            if s1 >= length {
                v.completed = true;
                v.state.velocity = Vec2::ZERO;
                let time = if s1 > s0 { t0 + dt * (length - s0) / (s1 - s0) } else { t0 + dt };
                events.push(StepEvent::Completed {
                    time,
                    vehicle: v.state.id,
                });
            }
        }
        self.steps += 1;
        self.time = self.steps as f64 * dt;
        events
    }

    /// Pairs of active vehicles whose centres are closer than the threshold.
    pub fn contacts(&self) -> Vec<Collision> {
        let active: Vec<&SimVehicle> = self.vehicles.iter().filter(|v| !v.completed).collect();
        let mut out = Vec::new();
        for (x, va) in active.iter().enumerate() {
            for vb in &active[x + 1..] {
                let threshold = COLLISION_FACTOR * va.state.length.max(vb.state.length);
                let distance = va.state.position.distance(vb.state.position);
                if distance < threshold {
                    let (a, b) = ordered(va.state.id, vb.state.id);
                    out.push(Collision {
                        a,
                        b,
                        position: (va.state.position + vb.state.position) * 0.5,
                        distance,
                    });
                }
            }
        }
        out
    }

    /// Contacts that started this step; a pair in continuous contact is
    /// reported once.
    pub fn detect_collisions(&mut self) -> Vec<Collision> {
        let now = self.contacts();
        let keys: BTreeSet<(VehicleId, VehicleId)> = now.iter().map(|c| (c.a, c.b)).collect();
        let fresh = now.into_iter().filter(|c| !self.contacts.contains(&(c.a, c.b))).collect();
        self.contacts = keys;
        fresh
    }

    /// Centre distance to the nearest active vehicle ahead on the same
    /// physical lane, with that vehicle's speed.
    pub fn leader_gap(&self, index: usize) -> Option<(f64, f64)> {
        let me = &self.vehicles[index];
        let g = &self.geometry;
        let my_route = g.route(me.state.route);
        let (my_key, my_local) = g.locate(me.state.route, me.state.arc_position);
        let mut best: Option<(f64, f64)> = None;
        for (k, other) in self.vehicles.iter().enumerate() {
            if k == index || other.completed {
                continue;
            }
            let (key, local) = g.locate(other.state.route, other.state.arc_position);
            let gap = if other.state.route == me.state.route {
                other.state.arc_position - me.state.arc_position
            } else if matches!(my_key, PathKey::Entry(_))
                && g.share_entry(me.state.route, other.state.route)
                && !matches!(key, PathKey::Exit(_))
            {
                other.state.arc_position - me.state.arc_position
            } else if let PathKey::Exit(lane) = key {
                if lane != my_route.exit_lane() {
                    continue;
                }
                match my_key {
                    PathKey::Exit(_) => local - my_local,
                    _ => my_route.exit_arc - me.state.arc_position + local,
                }
            } else {
                continue;
            };
            if gap > 0.0 && best.is_none_or(|b| gap < b.0) {
                best = Some((gap, other.state.speed()));
            }
        }
        best
    }
}

fn ordered(a: VehicleId, b: VehicleId) -> (VehicleId, VehicleId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
