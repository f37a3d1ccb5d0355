use super::{SimError, MAX_PLACEMENT_ATTEMPTS};
use crate::config::ScenarioConfig;
use crate::domain::{Approach, Movement, VehicleId, VehicleState};
use crate::geometry::Geometry;
use crate::rng::seeded_rng;
use rand::Rng;

/// Draws `n` vehicles on random approaches and movements.
///
/// Ids run from 1 to `n`. A draw that lands closer than
/// `min_same_lane_gap` to an earlier vehicle on the same entry lane is
/// redrawn whole.
pub fn generate_scenario(
    n: usize,
    seed: u64,
    config: &ScenarioConfig,
    geometry: &Geometry,
) -> Result<Vec<VehicleState>, SimError> {
    if n == 0 {
        return Err(SimError::EmptyScenario);
    }
    let mut rng = seeded_rng(seed, "scenario");
    let [v_lo, v_hi] = config.v0_range_mps();
    let [d_lo, d_hi] = config.d0_range;
    let mut placed: Vec<VehicleState> = Vec::with_capacity(n);
    for index in 0..n {
        let mut attempts = 0;
        let state = loop {
            if attempts == MAX_PLACEMENT_ATTEMPTS {
                return Err(SimError::PlacementFailure { vehicle: index, attempts });
            }
            attempts += 1;
            let approach = Approach::ALL[rng.random_range(0..4)];
            let movement = Movement::ALL[rng.random_range(0..3)];
            let lane = match (config.lanes_per_direction, movement) {
                (1, _) => 0,
                (_, Movement::Left) => 0,
                (_, Movement::Right) => 1,
                (lanes, Movement::Straight) => rng.random_range(0..lanes),
            };
            let d0 = uniform(&mut rng, d_lo, d_hi);
            let v0 = uniform(&mut rng, v_lo, v_hi);
            let Some(route_id) = geometry.find_route(approach, movement, lane) else {
                continue;
            };
            let route = geometry.route(route_id);
            let arc = route.stop_line_arc - d0;
            let crowded = placed.iter().any(|p| {
                geometry.share_entry(p.route, route_id) && (p.arc_position - arc).abs() < config.min_same_lane_gap
            });
            if crowded {
                continue;
            }
            let (position, tangent) = route.centerline.sample(arc);
            break VehicleState {
                id: VehicleId(index as u32 + 1),
                position,
                velocity: tangent * v0,
                route: route_id,
                arc_position: arc,
                length: config.vehicle_length,
            };
        };
        placed.push(state);
    }
    Ok(placed)
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
