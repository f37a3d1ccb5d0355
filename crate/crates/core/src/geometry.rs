//! Intersection layout: routes, centerlines and conflict points.
//!
//! The intersection centre is the origin and the four roads are aligned with
//! the axes. Traffic keeps right. Each route is an approach leg ending at the
//! stop line, a path through the box (straight segment or quarter arc) and an
//! exit leg.

use crate::config::ScenarioConfig;
use crate::domain::{Approach, Movement, RouteId, Vec2};
use serde::{Deserialize, Serialize};

/// Geometric tolerance for points lying on a centerline, metres.
pub const EPS_GEO: f64 = 1e-3;

const ARC_SEGMENTS: usize = 32;
const CLUSTER_RADIUS: f64 = 0.5;
const LEFT_TURN_RADIUS_LANES: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline; consecutive duplicate points are rejected so that
    /// cumulative arc length is strictly increasing.
    pub fn new(points: Vec<Vec2>) -> Option<Polyline> {
        if points.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let step = w[0].distance(w[1]);
            if step <= 0.0 {
                return None;
            }
            cumulative.push(cumulative.last().unwrap() + step);
        }
        Some(Polyline { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_index(&self, arc: f64) -> usize {
        let n = self.points.len() - 1;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&arc).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Position and unit tangent at `arc` (clamped to the polyline).
    pub fn sample(&self, arc: f64) -> (Vec2, Vec2) {
        let arc = arc.clamp(0.0, self.length());
        let i = self.segment_index(arc);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (arc - self.cumulative[i]) / seg_len;
        let tangent = (b - a) * (1.0 / seg_len);
        (a + (b - a) * t, tangent)
    }

    /// Distance from `p` to the closest point of the polyline.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Intersection parameters `(t, u)` of segments `p0→p1` and `q0→q1`.
fn segment_intersection(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> Option<(f64, f64)> {
    let r = p1 - p0;
    let s = q1 - q0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 * r.norm() * s.norm() {
        return None;
    }
    let qp = q0 - p0;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    let tol = 1e-9;
    if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
        Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// A lane on one road: the side of the intersection plus the lane index
/// counted from the road centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneRef {
    pub side: Approach,
    pub lane: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: RouteId,
    pub approach: Approach,
    pub movement: Movement,
    pub lane_index: u32,
    /// Side of the intersection the route leaves through.
    pub exit_side: Approach,
    pub centerline: Polyline,
    pub stop_line_arc: f64,
    /// Arc where the route leaves the intersection box.
    pub exit_arc: f64,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn entry_lane(&self) -> LaneRef {
        LaneRef {
            side: self.approach,
            lane: self.lane_index,
        }
    }

    pub fn exit_lane(&self) -> LaneRef {
        LaneRef {
            side: self.exit_side,
            lane: self.lane_index,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.approach, self.movement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub id: usize,
    pub route_a: RouteId,
    pub route_b: RouteId,
    pub arc_a: f64,
    pub arc_b: f64,
    pub location: Vec2,
}

impl ConflictPoint {
    pub fn involves(&self, route: RouteId) -> bool {
        self.route_a == route || self.route_b == route
    }

    /// Arc of this point along `route`, if the route takes part.
    pub fn arc_on(&self, route: RouteId) -> Option<f64> {
        if route == self.route_a {
            Some(self.arc_a)
        } else if route == self.route_b {
            Some(self.arc_b)
        } else {
            None
        }
    }
}

/// Which stretch of road a vehicle occupies; vehicles with equal keys share
/// the same physical lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathKey {
    Entry(LaneRef),
    Inside(RouteId),
    Exit(LaneRef),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Geometry {
    pub routes: Vec<Route>,
    pub conflict_points: Vec<ConflictPoint>,
    pub lane_width: f64,
    /// Distance from the centre to every stop line.
    pub half_size: f64,
    /// Conflict ids and arcs per route, sorted by arc.
    #[serde(skip)]
    per_route: Vec<Vec<(usize, f64)>>,
}

impl Geometry {
    pub fn new(routes: Vec<Route>, lane_width: f64, half_size: f64) -> Geometry {
        let conflict_points = find_conflict_points(&routes);
        let mut g = Geometry {
            routes,
            conflict_points,
            lane_width,
            half_size,
            per_route: Vec::new(),
        };
        g.index();
        g
    }

    fn index(&mut self) {
        let mut per_route = vec![Vec::new(); self.routes.len()];
        for cp in &self.conflict_points {
            per_route[cp.route_a.0].push((cp.id, cp.arc_a));
            per_route[cp.route_b.0].push((cp.id, cp.arc_b));
        }
        for list in &mut per_route {
            list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        }
        self.per_route = per_route;
    }

    /// Restores derived indices after deserialization.
    pub fn reindex(mut self) -> Geometry {
        self.index();
        self
    }

    pub fn route(&self, id: RouteId) -> &Route {
        &self.routes[id.0]
    }

    pub fn find_route(&self, approach: Approach, movement: Movement, lane: u32) -> Option<RouteId> {
        self.routes
            .iter()
            .find(|r| r.approach == approach && r.movement == movement && r.lane_index == lane)
            .map(|r| r.id)
    }

    /// Conflict points on `route` as `(conflict id, arc)`, ordered by arc.
    pub fn conflicts_on(&self, route: RouteId) -> &[(usize, f64)] {
        &self.per_route[route.0]
    }

    pub fn conflicts_between(&self, a: RouteId, b: RouteId) -> impl Iterator<Item = &ConflictPoint> {
        self.conflict_points
            .iter()
            .filter(move |cp| (cp.route_a == a && cp.route_b == b) || (cp.route_a == b && cp.route_b == a))
    }

    /// Arc of the first conflict point on the route; the stop line if the
    /// route has none.
    pub fn first_conflict_arc(&self, route: RouteId) -> f64 {
        self.per_route[route.0]
            .first()
            .map(|c| c.1)
            .unwrap_or_else(|| self.route(route).stop_line_arc)
    }

    pub fn last_conflict_arc(&self, route: RouteId) -> f64 {
        self.per_route[route.0]
            .last()
            .map(|c| c.1)
            .unwrap_or_else(|| self.route(route).exit_arc)
    }

    /// Lane stretch and local coordinate of a point at `arc` on `route`.
    pub fn locate(&self, route: RouteId, arc: f64) -> (PathKey, f64) {
        let r = self.route(route);
        if arc < r.stop_line_arc {
            (PathKey::Entry(r.entry_lane()), arc)
        } else if arc < r.exit_arc {
            (PathKey::Inside(route), arc - r.stop_line_arc)
        } else {
            (PathKey::Exit(r.exit_lane()), arc - r.exit_arc)
        }
    }

    /// Where each stretch of `route` starts, in route arc.
    pub fn stretches(&self, route: RouteId) -> [(PathKey, f64); 3] {
        let r = self.route(route);
        [
            (PathKey::Entry(r.entry_lane()), 0.0),
            (PathKey::Inside(route), r.stop_line_arc),
            (PathKey::Exit(r.exit_lane()), r.exit_arc),
        ]
    }

    /// Whether two routes share their entry lane.
    pub fn share_entry(&self, a: RouteId, b: RouteId) -> bool {
        self.route(a).entry_lane() == self.route(b).entry_lane()
    }
}

fn movements_for_lane(lanes: u32, lane: u32) -> &'static [Movement] {
    if lanes == 1 {
        &Movement::ALL
    } else if lane == 0 {
        &[Movement::Straight, Movement::Left]
    } else {
        &[Movement::Straight, Movement::Right]
    }
}

/// Builds the four-way intersection described by `config`.
pub fn build_intersection(config: &ScenarioConfig) -> Geometry {
    let w = config.lane_width;
    let lanes = config.lanes_per_direction;
    let half = lanes as f64 * w + config.corner_margin;
    let mut routes = Vec::new();
    for approach in Approach::ALL {
        for lane in 0..lanes {
            for &movement in movements_for_lane(lanes, lane) {
                let id = RouteId(routes.len());
                routes.push(make_route(
                    id,
                    approach,
                    movement,
                    lane,
                    w,
                    half,
                    config.approach_length,
                    config.exit_length,
                ));
            }
        }
    }
    Geometry::new(routes, w, half)
}

#[allow(clippy::too_many_arguments)]
fn make_route(
    id: RouteId,
    approach: Approach,
    movement: Movement,
    lane: u32,
    lane_width: f64,
    half: f64,
    approach_length: f64,
    exit_length: f64,
) -> Route {
    let h = approach.heading();
    let r = h.right();
    let offset = lane_width * (lane as f64 + 0.5);
    let entry = -(h * half) + r * offset;
    let start = entry - h * approach_length;

    let mut points = vec![start, entry];
    let exit_heading = match movement {
        Movement::Straight => {
            points.push(entry + h * (2.0 * half));
            h
        }
        Movement::Left => {
            // Hold the lane until close to the far lane, turn on a tight arc,
            // then cross to the exit: opposing left turns interlock instead of
            // brushing past each other.
            let radius = lane_width * LEFT_TURN_RADIUS_LANES;
            let turn_start = h * (offset - radius) + r * offset;
            let centre = h * (offset - radius) + r * (offset - radius);
            points.push(turn_start);
            for k in 1..=ARC_SEGMENTS {
                let th = std::f64::consts::FRAC_PI_2 * k as f64 / ARC_SEGMENTS as f64;
                points.push(centre + (r * th.cos() + h * th.sin()) * radius);
            }
            points.push(h * offset - r * half);
            h.left()
        }
        Movement::Right => {
            let radius = half - offset;
            let centre = entry + r * radius;
            for k in 1..=ARC_SEGMENTS {
                let th = std::f64::consts::FRAC_PI_2 * k as f64 / ARC_SEGMENTS as f64;
                points.push(centre + (-(r * th.cos()) + h * th.sin()) * radius);
            }
            h.right()
        }
    };
    let exit_point = *points.last().unwrap();
    points.push(exit_point + exit_heading * exit_length);
    let centerline = Polyline::new(points).expect("route points are distinct");
    let cum = centerline.cumulative();
    let exit_arc = cum[cum.len() - 2];
    Route {
        id,
        approach,
        movement,
        lane_index: lane,
        // The exit leg on side S carries traffic heading south, i.e. the
        // inbound heading of approach N reversed.
        exit_side: Approach::from_heading(-exit_heading),
        centerline,
        stop_line_arc: approach_length,
        exit_arc,
    }
}

fn find_conflict_points(routes: &[Route]) -> Vec<ConflictPoint> {
    let mut out = Vec::new();
    for (ia, a) in routes.iter().enumerate() {
        for b in &routes[ia + 1..] {
            if a.entry_lane() == b.entry_lane() {
                // Same lane until the stop line; handled as car following.
                continue;
            }
            let mut hits: Vec<(f64, f64, Vec2)> = Vec::new();
            let (pa, ca) = (a.centerline.points(), a.centerline.cumulative());
            let (pb, cb) = (b.centerline.points(), b.centerline.cumulative());
            for i in 0..pa.len() - 1 {
                for j in 0..pb.len() - 1 {
                    if let Some((t, u)) = segment_intersection(pa[i], pa[i + 1], pb[j], pb[j + 1]) {
                        let arc_a = ca[i] + t * (ca[i + 1] - ca[i]);
                        let arc_b = cb[j] + u * (cb[j + 1] - cb[j]);
                        let loc = pa[i] + (pa[i + 1] - pa[i]) * t;
                        hits.push((arc_a, arc_b, loc));
                    }
                }
            }
            hits.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut kept: Vec<(f64, f64, Vec2)> = Vec::new();
            for h in hits {
                let dup = kept.iter().any(|k| {
                    (k.0 - h.0).abs() < CLUSTER_RADIUS && (k.1 - h.1).abs() < CLUSTER_RADIUS
                });
                if !dup {
                    kept.push(h);
                }
            }
            for (arc_a, arc_b, location) in kept {
                out.push(ConflictPoint {
                    id: out.len(),
                    route_a: a.id,
                    route_b: b.id,
                    arc_a,
                    arc_b,
                    location,
                });
            }
        }
    }
    out
}
