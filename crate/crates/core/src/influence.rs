//! Pairwise kinematic influence and its propagation along influence paths.

use crate::domain::{VehicleId, VehicleState};
use crate::geometry::{Geometry, PathKey};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positions closer than this are treated as coincident.
pub const EPS_POS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InfluenceError {
    #[error("vehicles {0} and {1} occupy the same position")]
    CoincidentPositions(VehicleId, VehicleId),
    #[error("path endpoints must differ (got {0} twice)")]
    SameEndpoints(usize),
}

/// Direct influence `A`; entry `(i, j)` is the pressure of vehicle `i` on `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectInfluenceMatrix {
    pub ids: Vec<VehicleId>,
    pub a: DMatrix<f64>,
}

/// `A` scaled so that its largest entry is one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedInfluenceMatrix {
    pub ids: Vec<VehicleId>,
    pub a: DMatrix<f64>,
}

/// Sum over simple paths of edge-weight products.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeInfluenceMatrix {
    pub ids: Vec<VehicleId>,
    pub f: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowingRelation {
    pub leader: VehicleId,
    pub follower: VehicleId,
    pub gap: f64,
}

/// Influence of vehicle `i` on vehicle `j` in 1/s.
pub fn direct_influence(i: &VehicleState, j: &VehicleState) -> Result<f64, InfluenceError> {
    let dx = j.position - i.position;
    let dist = dx.norm();
    if dist <= EPS_POS {
        return Err(InfluenceError::CoincidentPositions(i.id, j.id));
    }
    let dv = i.velocity - j.velocity;
    let closing = dv.norm();
    let vj = j.velocity.norm();
    if closing == 0.0 || vj == 0.0 {
        return Ok(0.0);
    }
    let cos_theta = (dv.dot(dx) / (closing * dist)).clamp(-1.0, 1.0);
    let f0 = closing * cos_theta / dist;
    // sin(pi - phi) is the sine of the angle between v_j and dx; the cross
    // product form stays exact near the collinear nulls.
    let sin_term = (j.velocity.cross(dx).abs() / (vj * dist)).min(1.0);
    let f = f0 * sin_term / 2.0;
    Ok(if f > 0.0 { f } else { 0.0 })
}

pub fn direct_influence_matrix(states: &[VehicleState]) -> Result<DirectInfluenceMatrix, InfluenceError> {
    let n = states.len();
    let mut a = DMatrix::zeros(n, n);
    for (r, si) in states.iter().enumerate() {
        for (c, sj) in states.iter().enumerate() {
            if r != c {
                a[(r, c)] = direct_influence(si, sj)?;
            }
        }
    }
    Ok(DirectInfluenceMatrix {
        ids: states.iter().map(|s| s.id).collect(),
        a,
    })
}

/// Divides by the maximum entry; an all-zero matrix is returned unchanged.
pub fn normalize_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let max = m.iter().copied().fold(0.0_f64, f64::max);
    if max > 0.0 {
        m / max
    } else {
        m.clone()
    }
}

pub fn normalize(a: &DirectInfluenceMatrix) -> NormalizedInfluenceMatrix {
    NormalizedInfluenceMatrix {
        ids: a.ids.clone(),
        a: normalize_matrix(&a.a),
    }
}

/// All simple paths from `i` to `j` over positive edges, as node index lists.
pub fn enumerate_paths(a: &DMatrix<f64>, i: usize, j: usize) -> Result<Vec<Vec<usize>>, InfluenceError> {
    if i == j {
        return Err(InfluenceError::SameEndpoints(i));
    }
    let n = a.nrows();
    let mut out = Vec::new();
    let mut path = vec![i];
    let mut visited = vec![false; n];
    visited[i] = true;
    paths_dfs(a, j, &mut path, &mut visited, &mut out);
    Ok(out)
}

fn paths_dfs(a: &DMatrix<f64>, target: usize, path: &mut Vec<usize>, visited: &mut [bool], out: &mut Vec<Vec<usize>>) {
    let here = *path.last().expect("path is never empty");
    for next in 0..a.ncols() {
        if visited[next] || a[(here, next)] <= 0.0 {
            continue;
        }
        path.push(next);
        if next == target {
            out.push(path.clone());
        } else {
            visited[next] = true;
            paths_dfs(a, target, path, visited, out);
            visited[next] = false;
        }
        path.pop();
    }
}

/// Cumulative influence over every simple path, one depth-first sweep per
/// source node.
pub fn cumulative_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut f = DMatrix::zeros(n, n);
    let mut visited = vec![false; n];
    for src in 0..n {
        visited[src] = true;
        sweep(a, src, src, 1.0, &mut visited, &mut f);
        visited[src] = false;
    }
    f
}

fn sweep(a: &DMatrix<f64>, src: usize, here: usize, weight: f64, visited: &mut [bool], f: &mut DMatrix<f64>) {
    for next in 0..a.ncols() {
        let w = a[(here, next)];
        if visited[next] || w <= 0.0 {
            continue;
        }
        let product = weight * w;
        f[(src, next)] += product;
        visited[next] = true;
        sweep(a, src, next, product, visited, f);
        visited[next] = false;
    }
}

pub fn cumulative_influence_matrix(a: &NormalizedInfluenceMatrix) -> CumulativeInfluenceMatrix {
    CumulativeInfluenceMatrix {
        ids: a.ids.clone(),
        f: cumulative_matrix(&a.a),
    }
}

/// Leader-follower pairs among vehicles that share a route, consecutive by
/// arc position.
pub fn following_relations(states: &[VehicleState]) -> Vec<FollowingRelation> {
    let mut sorted: Vec<&VehicleState> = states.iter().collect();
    sorted.sort_by(|a, b| {
        a.route
            .cmp(&b.route)
            .then(b.arc_position.total_cmp(&a.arc_position))
            .then(a.id.cmp(&b.id))
    });
    sorted
        .windows(2)
        .filter(|w| w[0].route == w[1].route)
        .map(|w| FollowingRelation {
            leader: w[0].id,
            follower: w[1].id,
            gap: w[0].arc_position - w[1].arc_position,
        })
        .collect()
}

/// Leader-follower pairs over physical lanes rather than route ids.
///
/// Besides same-route pairs, a vehicle still on its approach follows the
/// nearest vehicle ahead that entered from the same lane, whatever its route.
pub fn lane_following_relations(states: &[VehicleState], geometry: &Geometry) -> Vec<FollowingRelation> {
    let mut out = following_relations(states);
    let mut by_lane: Vec<&VehicleState> = states.iter().collect();
    by_lane.sort_by(|a, b| {
        let la = geometry.route(a.route).entry_lane();
        let lb = geometry.route(b.route).entry_lane();
        la.cmp(&lb).then(b.arc_position.total_cmp(&a.arc_position)).then(a.id.cmp(&b.id))
    });
    for w in by_lane.windows(2) {
        let (front, rear) = (w[0], w[1]);
        let same_lane = geometry.share_entry(front.route, rear.route);
        let rear_on_approach = matches!(geometry.locate(rear.route, rear.arc_position).0, PathKey::Entry(_));
        if same_lane && front.route != rear.route && rear_on_approach {
            out.push(FollowingRelation {
                leader: front.id,
                follower: rear.id,
                gap: front.arc_position - rear.arc_position,
            });
        }
    }
    out.sort_by(|a, b| a.leader.cmp(&b.leader).then(a.follower.cmp(&b.follower)));
    out
}

/// Adds a symmetric pair of edges at the matrix maximum (one if the matrix is
/// all zero) for every relation closer than `max_gap`.
pub fn augment_following(m: &mut DMatrix<f64>, ids: &[VehicleId], relations: &[FollowingRelation], max_gap: f64) {
    let max = m.iter().copied().fold(0.0_f64, f64::max);
    let w = if max > 0.0 { max } else { 1.0 };
    let index = |id: VehicleId| ids.iter().position(|x| *x == id);
    for rel in relations.iter().filter(|r| r.gap < max_gap) {
        if let (Some(a), Some(b)) = (index(rel.leader), index(rel.follower)) {
            m[(a, b)] = m[(a, b)].max(w);
            m[(b, a)] = m[(b, a)].max(w);
        }
    }
}
