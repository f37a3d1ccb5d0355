use crate::domain::{Vec2, VehicleId, VehicleState};
use crate::geometry::Geometry;
use crate::influence::FollowingRelation;
use crate::planning::{earliest_arrival, Limits};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub id: VehicleId,
    pub route: String,
    pub position: Vec2,
    pub speed: f64,
    /// Distance to the first conflict point still ahead on the route.
    pub distance: f64,
    /// Earliest arrival at that point.
    pub eta: f64,
}

/// Two vehicles whose routes meet at a conflict point neither has passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub a: VehicleId,
    pub b: VehicleId,
    pub conflict_id: usize,
    pub location: Vec2,
    pub speed_a: f64,
    pub speed_b: f64,
    pub distance_a: f64,
    pub distance_b: f64,
    pub eta_a: f64,
    pub eta_b: f64,
}

impl ConflictPair {
    /// The vehicle that reaches the point first; ties go to the lower id.
    pub fn fcfs(&self) -> (VehicleId, VehicleId) {
        if self.eta_a < self.eta_b || (self.eta_a == self.eta_b && self.a < self.b) {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }

    pub fn key(&self) -> (VehicleId, VehicleId) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

/// Everything a backend may look at when proposing an order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NegotiationContext {
    pub members: Vec<MemberInfo>,
    pub conflicts: Vec<ConflictPair>,
    pub following: Vec<FollowingRelation>,
    pub agreed: Vec<(VehicleId, VehicleId)>,
    /// Violations from earlier rounds, as readable lines.
    pub feedback: Vec<String>,
}

impl NegotiationContext {
    /// Context over `states`; relations with a party outside `states` are
    /// dropped.
    pub fn build(
        states: &[VehicleState],
        geometry: &Geometry,
        following: &[FollowingRelation],
        limits: &Limits,
    ) -> NegotiationContext {
        let members = states
            .iter()
            .map(|s| {
                let next = geometry
                    .conflicts_on(s.route)
                    .iter()
                    .map(|c| c.1)
                    .find(|arc| *arc >= s.arc_position)
                    .unwrap_or_else(|| geometry.last_conflict_arc(s.route));
                let distance = (next - s.arc_position).max(0.0);
                MemberInfo {
                    id: s.id,
                    route: geometry.route(s.route).label(),
                    position: s.position,
                    speed: s.speed(),
                    distance,
                    eta: earliest_arrival(s.speed(), distance, limits.a_max, limits.v_max),
                }
            })
            .collect();
        let ids: Vec<VehicleId> = states.iter().map(|s| s.id).collect();
        NegotiationContext {
            members,
            conflicts: conflict_pairs(states, geometry, limits),
            following: following
                .iter()
                .filter(|r| ids.contains(&r.leader) && ids.contains(&r.follower))
                .cloned()
                .collect(),
            agreed: Vec::new(),
            feedback: Vec::new(),
        }
    }

    pub fn ids(&self) -> Vec<VehicleId> {
        self.members.iter().map(|m| m.id).collect()
    }

    pub fn member(&self, id: VehicleId) -> Option<&MemberInfo> {
        self.members.iter().find(|m| m.id == id)
    }

    pub fn eta(&self, id: VehicleId) -> f64 {
        self.member(id).map_or(f64::INFINITY, |m| m.eta)
    }

    /// The sub-context restricted to `ids`.
    pub fn restrict(&self, ids: &[VehicleId]) -> NegotiationContext {
        NegotiationContext {
            members: self.members.iter().filter(|m| ids.contains(&m.id)).cloned().collect(),
            conflicts: self
                .conflicts
                .iter()
                .filter(|c| ids.contains(&c.a) && ids.contains(&c.b))
                .cloned()
                .collect(),
            following: self
                .following
                .iter()
                .filter(|r| ids.contains(&r.leader) && ids.contains(&r.follower))
                .cloned()
                .collect(),
            agreed: self
                .agreed
                .iter()
                .filter(|(a, b)| ids.contains(a) && ids.contains(b))
                .copied()
                .collect(),
            feedback: Vec::new(),
        }
    }

    pub fn following_edges(&self) -> Vec<(VehicleId, VehicleId)> {
        self.following.iter().map(|r| (r.leader, r.follower)).collect()
    }
}

/// Conflicting vehicle pairs, one per pair, at the shared conflict point
/// that is nearest for both vehicles combined.
pub fn conflict_pairs(states: &[VehicleState], geometry: &Geometry, limits: &Limits) -> Vec<ConflictPair> {
    let mut out = Vec::new();
    for (x, sa) in states.iter().enumerate() {
        for sb in &states[x + 1..] {
            if sa.route == sb.route {
                continue;
            }
            let best = geometry
                .conflicts_between(sa.route, sb.route)
                .filter_map(|cp| {
                    let da = cp.arc_on(sa.route)? - sa.arc_position;
                    let db = cp.arc_on(sb.route)? - sb.arc_position;
                    (da >= 0.0 && db >= 0.0).then_some((da + db, da, db, cp))
                })
                .min_by(|p, q| p.0.total_cmp(&q.0).then(p.3.id.cmp(&q.3.id)));
            if let Some((_, da, db, cp)) = best {
                let (a, b, da, db, va, vb) = if sa.id < sb.id {
                    (sa.id, sb.id, da, db, sa.speed(), sb.speed())
                } else {
                    (sb.id, sa.id, db, da, sb.speed(), sa.speed())
                };
                out.push(ConflictPair {
                    a,
                    b,
                    conflict_id: cp.id,
                    location: cp.location,
                    speed_a: va,
                    speed_b: vb,
                    distance_a: da,
                    distance_b: db,
                    eta_a: earliest_arrival(va, da, limits.a_max, limits.v_max),
                    eta_b: earliest_arrival(vb, db, limits.a_max, limits.v_max),
                });
            }
        }
    }
    out.sort_by_key(|c| c.key());
    out
}
