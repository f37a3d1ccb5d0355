use super::trace::{SimEvent, SimTrace, Snapshot, TraceHeader, VehicleInfo, VehicleSnapshot, TRACE_SCHEMA};
use super::{generate_scenario, SimError, StepEvent, World};
use crate::config::ScenarioConfig;
use crate::domain::{MethodKind, VehicleId, VehicleState};
use crate::geometry::{build_intersection, Geometry};
use crate::grouping::divide_groups;
use crate::influence::{cumulative_influence_matrix, direct_influence_matrix, lane_following_relations, normalize};
use crate::negotiation::{
    fcfs_order, inter_group_order, intra_group_order, NegotiationContext, NegotiatorBackend, PassOrder, Scope,
    TranscriptEvent,
};
use crate::planning::{
    acceleration_command, earliest_arrival, full_throttle_speed, schedule_times_with_floor, CommandTarget, CrossingSchedule,
    ScheduleRequest,
};
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// Standstill gap of the car-following guard, metres.
const JAM_GAP: f64 = 2.0;
/// Time headway of the car-following guard, seconds.
const HEADWAY: f64 = 1.0;
/// Comfortable deceleration of the car-following guard, m/s².
const COMFORT_DECEL: f64 = 2.0;

/// Runs one scenario generated from `config.n_vehicles` and `config.seed`.
pub fn run_scenario(
    method: MethodKind,
    backend: &dyn NegotiatorBackend,
    config: &ScenarioConfig,
) -> Result<SimTrace, SimError> {
    let geometry = build_intersection(config);
    let states = generate_scenario(config.n_vehicles, config.seed, config, &geometry)?;
    Ok(run(method, &states, backend, config))
}

/// Simulates `scenario` under `method` until every vehicle has left or the
/// time limit is hit.
pub fn run(
    method: MethodKind,
    scenario: &[VehicleState],
    backend: &dyn NegotiatorBackend,
    config: &ScenarioConfig,
) -> SimTrace {
    let geometry = build_intersection(config);
    let header = TraceHeader {
        schema: TRACE_SCHEMA.to_string(),
        method,
        backend: backend.name().to_string(),
        n_vehicles: scenario.len(),
        seed: config.seed,
        config: config.clone(),
        vehicles: scenario
            .iter()
            .map(|s| {
                let route = geometry.route(s.route);
                VehicleInfo {
                    id: s.id,
                    route: s.route,
                    route_label: route.label(),
                    initial_arc: s.arc_position,
                    route_length: route.length(),
                    v0: s.speed(),
                    length: s.length,
                }
            })
            .collect(),
    };
    let mut world = World::from_config(config, geometry, scenario.to_vec());
    let mut controller = Controller::new(method, backend, config);
    let mut trace = SimTrace {
        header: Some(header),
        snapshots: vec![snapshot(&world)],
        events: Vec::new(),
    };
    let max_steps = (config.t_limit / config.dt).round() as u64;
    let every = config.replan_every_steps() as u64;
    while !world.all_completed() && world.steps < max_steps {
        if world.steps % every == 0 {
            controller.replan(&world, &mut trace.events);
        }
        let commands = controller.commands(&world);
        let mut step_events = world.step(&commands, config.dt);
        step_events.sort_by(|a, b| step_time(a).total_cmp(&step_time(b)));
        for e in step_events {
            trace.events.push(match e {
                StepEvent::Crossing {
                    time,
                    vehicle,
                    conflict_id,
                    speed,
                } => SimEvent::ConflictCrossing {
                    time,
                    vehicle,
                    route: world.vehicle(vehicle).map(|v| v.state.route).expect("known vehicle"),
                    conflict_id,
                    speed,
                },
                StepEvent::Completed { time, vehicle } => SimEvent::VehicleCompleted { time, vehicle },
            });
        }
        for c in world.detect_collisions() {
            trace.events.push(SimEvent::Collision {
                time: world.time,
                a: c.a,
                b: c.b,
                position: c.position,
                distance: c.distance,
            });
        }
        trace.snapshots.push(snapshot(&world));
    }
    trace
}

fn step_time(e: &StepEvent) -> f64 {
    match e {
        StepEvent::Crossing { time, .. } | StepEvent::Completed { time, .. } => *time,
    }
}

fn snapshot(world: &World) -> Snapshot {
    Snapshot {
        time: world.time,
        step: world.steps,
        vehicles: world
            .vehicles
            .iter()
            .map(|v| VehicleSnapshot {
                id: v.state.id,
                arc: v.state.arc_position,
                x: v.state.position.x,
                y: v.state.position.y,
                speed: v.state.speed(),
                accel: v.last_accel,
                completed: v.completed,
            })
            .collect(),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A vehicle that still has conflict points ahead or crossed its first one
/// less than `dt_safe` ago.
#[derive(Debug, Clone)]
struct Candidate {
    state: VehicleState,
    /// Arc of the first conflict point on the route.
    reference: f64,
    /// Crossing time of the reference once passed.
    pinned_at: Option<f64>,
}

/// Turns replanning ticks into per-step acceleration commands.
pub struct Controller<'a> {
    method: MethodKind,
    backend: &'a dyn NegotiatorBackend,
    config: &'a ScenarioConfig,
    targets: BTreeMap<VehicleId, f64>,
}

impl<'a> Controller<'a> {
    pub fn new(method: MethodKind, backend: &'a dyn NegotiatorBackend, config: &'a ScenarioConfig) -> Controller<'a> {
        Controller {
            method,
            backend,
            config,
            targets: BTreeMap::new(),
        }
    }

    pub fn targets(&self) -> &BTreeMap<VehicleId, f64> {
        &self.targets
    }

    fn candidates(&self, world: &World) -> Vec<Candidate> {
        let g = &world.geometry;
        world
            .vehicles
            .iter()
            .filter(|v| !v.completed && !g.conflicts_on(v.state.route).is_empty())
            .filter(|v| {
                let recent = v.crossed.first().is_some_and(|c| world.time - c.1 < self.config.dt_safe);
                v.state.arc_position < g.last_conflict_arc(v.state.route) || recent
            })
            .map(|v| {
                let reference = g.first_conflict_arc(v.state.route);
                Candidate {
                    state: v.state.clone(),
                    reference,
                    pinned_at: (v.state.arc_position >= reference).then(|| v.crossed.first().map_or(world.time, |c| c.1)),
                }
            })
            .collect()
    }

    /// Schedules `order` (a permutation of some candidates).
    ///
    /// Pinned vehicles are not scheduled but predicted from their state;
    /// they come first, by crossing time.
    /// Besides the gap at the reference point, a vehicle is held back until
    /// every earlier vehicle it shares a conflict point with is predicted to
    /// be `dt_safe` past that point.
    fn schedule(
        &self,
        world: &World,
        order: &[VehicleId],
        pool: &[Candidate],
        lifts: &BTreeMap<VehicleId, f64>,
    ) -> CrossingSchedule {
        let limits = world.limits;
        let now = world.time;
        let earliest_of =
            |c: &Candidate| now + earliest_arrival(c.state.speed(), c.reference - c.state.arc_position, limits.a_max, limits.v_max);
        let by_id: BTreeMap<VehicleId, &Candidate> = pool.iter().map(|c| (c.state.id, c)).collect();
        let mut fixed: Vec<(f64, &Candidate)> = order
            .iter()
            .filter_map(|id| by_id.get(id).copied())
            .filter_map(|c| c.pinned_at.map(|t| (t, c)))
            .collect();
        fixed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.state.id.cmp(&b.1.state.id)));
        let free = order.iter().filter_map(|id| by_id.get(id).copied()).filter(|c| c.pinned_at.is_none());
        let sequence: Vec<&Candidate> = fixed.into_iter().map(|f| f.1).chain(free).collect();
        let earliest: Vec<f64> = sequence.iter().map(|c| earliest_of(c)).collect();
        let requests: Vec<ScheduleRequest> = sequence
            .iter()
            .zip(&earliest)
            .map(|(c, &e)| ScheduleRequest {
                id: c.state.id,
                arrival: c.pinned_at.unwrap_or_else(|| lifts.get(&c.state.id).map_or(e, |l| e.max(*l))),
                pinned: c.pinned_at.is_some(),
            })
            .collect();
        let g = &world.geometry;
        let dt_safe = self.config.dt_safe;
        // Predicted time at which an already scheduled vehicle reaches `arc`.
        let passage = |c: &Candidate, target: f64, early: f64, arc: f64| -> f64 {
            let slow = |speed: f64, distance: f64| {
                let from_rest = earliest_arrival(0.0, distance, limits.a_max, limits.v_max);
                if speed > 1e-6 {
                    (distance / speed).min(from_rest)
                } else {
                    from_rest
                }
            };
            if c.pinned_at.is_some() {
                return now + slow(c.state.speed(), arc - c.state.arc_position);
            }
            let to_ref = c.reference - c.state.arc_position;
            let full = full_throttle_speed(c.state.speed(), to_ref, limits.a_max, limits.v_max);
            let speed = if target > early + 1e-6 {
                let wait = (c.reference - g.route(c.state.route).stop_line_arc).max(0.0);
                full.min(self.config.min_crossing_speed.min(full_throttle_speed(0.0, wait, limits.a_max, limits.v_max)))
            } else {
                full
            };
            target + slow(speed, arc - c.reference)
        };
        let extra = |i: usize, times: &[f64]| -> f64 {
            let me = sequence[i];
            let mut floor = f64::NEG_INFINITY;
            for (j, other) in sequence[..i].iter().enumerate() {
                for cp in g.conflicts_between(me.state.route, other.state.route) {
                    let (Some(my_arc), Some(their_arc)) = (cp.arc_on(me.state.route), cp.arc_on(other.state.route)) else {
                        continue;
                    };
                    if their_arc < other.state.arc_position || my_arc < me.reference {
                        continue;
                    }
                    let clear = passage(other, times[j], earliest[j], their_arc) + dt_safe;
                    floor = floor.max(clear - (my_arc - me.reference) / limits.v_max);
                }
            }
            floor
        };
        let route_of: Vec<_> = sequence.iter().map(|c| c.state.route).collect();
        schedule_times_with_floor(
            &requests,
            dt_safe,
            self.config.constraint_mode,
            |j, i| related(g, route_of[j], route_of[i]),
            extra,
        )
    }

    /// Recomputes every target from the current world state.
    pub fn replan(&mut self, world: &World, events: &mut Vec<SimEvent>) {
        self.targets.clear();
        let pool = self.candidates(world);
        if pool.is_empty() {
            return;
        }
        match self.method {
            MethodKind::Ivd => self.replan_individual(world, &pool, events),
            MethodKind::Ign | MethodKind::Iign => self.replan_grouped(world, &pool, events),
        }
    }

    /// The ego vehicle's own target against the vehicles it sees ahead of
    /// it in first-come-first-served order.
    ///
    /// The ego knows its own earliest arrival but only observes the others,
    /// whose arrivals it extrapolates at their current speed.
    fn individual_target(
        &self,
        world: &World,
        ego: &Candidate,
        pool: &[Candidate],
    ) -> CrossingSchedule {
        let g = &world.geometry;
        let local: Vec<Candidate> = pool
            .iter()
            .filter(|c| {
                c.state.id == ego.state.id || c.state.position.distance(ego.state.position) <= self.config.detect_range_ivd
            })
            .cloned()
            .collect();
        let states: Vec<VehicleState> = local.iter().map(|c| c.state.clone()).collect();
        let following = lane_following_relations(&states, g);
        let mut ctx = NegotiationContext::build(&states, g, &following, &world.limits);
        let ego_id = ego.state.id;
        for m in ctx.members.iter_mut().filter(|m| m.id != ego_id) {
            m.eta = observed_eta(m.speed, m.distance, &world.limits);
        }
        for c in &mut ctx.conflicts {
            if c.a != ego_id {
                c.eta_a = observed_eta(c.speed_a, c.distance_a, &world.limits);
            }
            if c.b != ego_id {
                c.eta_b = observed_eta(c.speed_b, c.distance_b, &world.limits);
            }
        }
        let order = fcfs_order(&ctx);
        let position = order.iter().position(|id| *id == ego.state.id).expect("ego in its own view");
        self.schedule(world, &order[..=position], &local, &BTreeMap::new())
    }

    fn replan_individual(&mut self, world: &World, pool: &[Candidate], events: &mut Vec<SimEvent>) {
        let mut own = Vec::new();
        for (k, ego) in pool.iter().enumerate() {
            if ego.pinned_at.is_some() {
                continue;
            }
            let schedule = self.individual_target(world, ego, pool);
            if let Some(entry) = schedule.entries.iter().find(|e| e.id == ego.state.id) {
                self.targets.insert(ego.state.id, entry.target_time);
                own.push(entry.clone());
            }
            events.push(SimEvent::Schedule {
                time: world.time,
                scope: Scope::Group(k),
                entries: schedule.entries,
            });
        }
        events.push(SimEvent::Schedule {
            time: world.time,
            scope: Scope::Global,
            entries: own,
        });
    }

    fn replan_grouped(&mut self, world: &World, pool: &[Candidate], events: &mut Vec<SimEvent>) {
        let g = &world.geometry;
        let limits = world.limits;
        let now = world.time;
        let states: Vec<VehicleState> = pool.iter().map(|c| c.state.clone()).collect();
        let ids: Vec<VehicleId> = states.iter().map(|s| s.id).collect();
        let following = lane_following_relations(&states, g);
        let groups = match self.groups(&states, &following, now, events) {
            Ok(groups) => groups,
            Err(reason) => {
                events.push(SimEvent::FallbackUsed {
                    time: now,
                    scope: None,
                    reason,
                });
                vec![ids.clone()]
            }
        };
        events.push(SimEvent::GroupPartition {
            time: now,
            groups: groups.clone(),
        });
        let ctx = NegotiationContext::build(&states, g, &following, &limits);
        let mut intra = Vec::with_capacity(groups.len());
        for (k, members) in groups.iter().enumerate() {
            let sub = ctx.restrict(members);
            let (order, transcript) = intra_group_order(self.backend, &sub, self.config.max_renegotiations, Scope::Group(k));
            record(now, transcript, &order, events);
            intra.push(order);
        }
        let orders: Vec<(Scope, Vec<VehicleId>)> = match self.method {
            MethodKind::Iign => {
                let (global, transcript) = inter_group_order(self.backend, &intra, &ctx, self.config.max_renegotiations);
                record(now, transcript, &global, events);
                vec![(Scope::Global, global.ordered_ids)]
            }
            _ => intra.into_iter().map(|o| (o.scope, o.ordered_ids)).collect(),
        };
        // Without an inter-group order, each vehicle also keeps to what its
        // own view of the surroundings allows.
        let mut lifts = BTreeMap::new();
        if self.method == MethodKind::Ign {
            for ego in pool.iter().filter(|c| c.pinned_at.is_none()) {
                let own = self.individual_target(world, ego, pool);
                if let Some(entry) = own.entries.iter().find(|e| e.id == ego.state.id) {
                    lifts.insert(ego.state.id, entry.target_time);
                }
            }
        }
        for (scope, order) in orders {
            let schedule = self.schedule(world, &order, pool, &lifts);
            for e in schedule.entries.iter().filter(|e| !e.pinned) {
                self.targets.insert(e.id, e.target_time);
            }
            events.push(SimEvent::Schedule {
                time: now,
                scope,
                entries: schedule.entries,
            });
        }
    }

    fn groups(
        &self,
        states: &[VehicleState],
        following: &[crate::influence::FollowingRelation],
        now: f64,
        events: &mut Vec<SimEvent>,
    ) -> Result<Vec<Vec<VehicleId>>, String> {
        if states.len() == 1 {
            return Ok(vec![vec![states[0].id]]);
        }
        let direct = direct_influence_matrix(states).map_err(|e| e.to_string())?;
        let cumulative = cumulative_influence_matrix(&normalize(&direct));
        events.push(SimEvent::Influence {
            time: now,
            ids: direct.ids.clone(),
            direct: rows(&direct.a),
            cumulative: rows(&cumulative.f),
        });
        let outcome = divide_groups(&cumulative, following, &self.config.grouping, self.config.seed).map_err(|e| e.to_string())?;
        Ok(outcome.partition.groups)
    }

    /// Acceleration for every vehicle for the coming step.
    pub fn commands(&self, world: &World) -> Vec<f64> {
        let limits = world.limits;
        let dt = self.config.dt;
        let g = &world.geometry;
        world
            .vehicles
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if v.completed {
                    return 0.0;
                }
                let speed = v.state.speed();
                let arc = v.state.arc_position;
                let target = match self.targets.get(&v.state.id) {
                    Some(&t) if arc < g.first_conflict_arc(v.state.route) => {
                        let route = g.route(v.state.route);
                        let distance = g.first_conflict_arc(v.state.route) - arc;
                        let to_stop = route.stop_line_arc - arc;
                        CommandTarget::Reach {
                            distance,
                            time: t - world.time,
                            hold: if to_stop >= 1.0 { to_stop } else { distance },
                            min_arrival_speed: self.config.min_crossing_speed,
                        }
                    }
                    _ => CommandTarget::Cruise,
                };
                let mut a = acceleration_command(speed, target, &limits, dt).unwrap_or(limits.a_min);
                if let Some((gap, leader_speed)) = world.leader_gap(k) {
                    let s = (gap - v.state.length).max(0.1);
                    let desired = JAM_GAP
                        + speed * HEADWAY
                        + speed * (speed - leader_speed) / (2.0 * (limits.a_max * COMFORT_DECEL).sqrt());
                    let guard = limits.a_max * (1.0 - (desired.max(0.0) / s).powi(2));
                    a = a.min(guard);
                }
                a.clamp(limits.a_min, limits.a_max)
            })
            .collect()
    }
}

/// Arrival time when holding the current speed; from rest at full throttle.
fn observed_eta(speed: f64, distance: f64, limits: &crate::planning::Limits) -> f64 {
    if distance <= 0.0 {
        0.0
    } else if speed > 0.5 {
        distance / speed
    } else {
        earliest_arrival(0.0, distance, limits.a_max, limits.v_max)
    }
}

/// Whether two routes need separating in time: they cross, merge or share
/// an entry lane.
fn related(g: &Geometry, a: crate::domain::RouteId, b: crate::domain::RouteId) -> bool {
    a == b || g.share_entry(a, b) || g.conflicts_between(a, b).next().is_some()
}

fn record(now: f64, transcript: Vec<TranscriptEvent>, order: &PassOrder, events: &mut Vec<SimEvent>) {
    for t in transcript {
        if let TranscriptEvent::Committed { .. } = t {
            continue;
        }
        events.push(SimEvent::NegotiationRound { time: now, transcript: t });
    }
    events.push(SimEvent::OrderCommitted {
        time: now,
        scope: order.scope,
        order: order.ordered_ids.clone(),
        rounds: order.rounds_used,
        fallback: order.fallback,
    });
    if order.fallback {
        events.push(SimEvent::FallbackUsed {
            time: now,
            scope: Some(order.scope),
            reason: "renegotiation cap reached".to_string(),
        });
    }
}
