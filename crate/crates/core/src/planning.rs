//! Crossing-time scheduling and longitudinal control.

use crate::config::ConstraintMode;
use crate::domain::VehicleId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PlanningError {
    /// Even full braking reaches the point before the target time.
    #[error("target unreachable: braking at a_min still arrives {early_by:.3} m early")]
    InfeasibleTarget { early_by: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub a_min: f64,
    pub a_max: f64,
    pub v_max: f64,
}

/// Minimum time to cover `distance` from `speed`, accelerating at `a_max` up
/// to `v_max` and cruising afterwards.
pub fn earliest_arrival(speed: f64, distance: f64, a_max: f64, v_max: f64) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    if speed >= v_max || a_max <= 0.0 {
        return if speed > 0.0 { distance / speed.min(v_max) } else { f64::INFINITY };
    }
    let t_ramp = (v_max - speed) / a_max;
    let d_ramp = speed * t_ramp + 0.5 * a_max * t_ramp * t_ramp;
    if distance <= d_ramp {
        (-speed + (speed * speed + 2.0 * a_max * distance).sqrt()) / a_max
    } else {
        t_ramp + (distance - d_ramp) / v_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub id: VehicleId,
    pub target_time: f64,
    pub pinned: bool,
}

/// Target crossing times in pass order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CrossingSchedule {
    pub entries: Vec<ScheduleEntry>,
}

impl CrossingSchedule {
    pub fn target(&self, id: VehicleId) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.target_time)
    }
}

/// One vehicle in pass order: its earliest possible arrival, or for a pinned
/// vehicle its committed crossing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRequest {
    pub id: VehicleId,
    pub arrival: f64,
    pub pinned: bool,
}

/// Spaces crossing times along the pass order.
///
/// In `AllConsecutive` mode every vehicle starts at least `dt_safe` after its
/// predecessor. In `ConflictingOnly` mode a vehicle only waits for earlier
/// vehicles it is `related` to (by index into `order`). Pinned vehicles keep
/// their own time.
pub fn schedule_times(
    order: &[ScheduleRequest],
    dt_safe: f64,
    mode: ConstraintMode,
    related: impl Fn(usize, usize) -> bool,
) -> CrossingSchedule {
    schedule_times_with_floor(order, dt_safe, mode, related, |_, _| f64::NEG_INFINITY)
}

/// [`schedule_times`] with an extra lower bound per vehicle, computed from
/// the targets already fixed for the vehicles before it.
pub fn schedule_times_with_floor(
    order: &[ScheduleRequest],
    dt_safe: f64,
    mode: ConstraintMode,
    related: impl Fn(usize, usize) -> bool,
    mut extra: impl FnMut(usize, &[f64]) -> f64,
) -> CrossingSchedule {
    let mut times: Vec<f64> = Vec::with_capacity(order.len());
    for (i, req) in order.iter().enumerate() {
        let t = if req.pinned {
            req.arrival
        } else if i == 0 {
            req.arrival.max(extra(i, &times))
        } else {
            let floor = match mode {
                ConstraintMode::AllConsecutive => times[i - 1] + dt_safe,
                ConstraintMode::ConflictingOnly => (0..i)
                    .filter(|&j| related(j, i))
                    .map(|j| times[j] + dt_safe)
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            req.arrival.max(floor).max(extra(i, &times))
        };
        times.push(t);
    }
    CrossingSchedule {
        entries: order
            .iter()
            .zip(times)
            .map(|(req, target_time)| ScheduleEntry {
                id: req.id,
                target_time,
                pinned: req.pinned,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommandTarget {
    /// Reach the point `distance` ahead in `time` seconds. If that needs a
    /// stop, the vehicle stops within `hold` meters instead. A constant
    /// profile arriving slower than `min_arrival_speed` is replaced by
    /// waiting toward the hold point and leaving at full throttle.
    Reach {
        distance: f64,
        time: f64,
        hold: f64,
        min_arrival_speed: f64,
    },
    /// Track `v_max`.
    Cruise,
}

impl CommandTarget {
    /// A target with no arrival-speed floor.
    pub fn reach(distance: f64, time: f64, hold: f64) -> CommandTarget {
        CommandTarget::Reach {
            distance,
            time,
            hold,
            min_arrival_speed: 0.0,
        }
    }
}

fn clamp_for_step(a: f64, speed: f64, limits: &Limits, dt: f64) -> f64 {
    a.clamp(limits.a_min, limits.a_max)
        .min((limits.v_max - speed) / dt)
        .max(-speed / dt)
}

/// Distance covered in `tau` seconds braking at `a_min`, stopping allowed.
fn min_distance(speed: f64, tau: f64, a_min: f64) -> f64 {
    let t_stop = speed / -a_min;
    if t_stop <= tau {
        speed * speed / (-2.0 * a_min)
    } else {
        speed * tau + 0.5 * a_min * tau * tau
    }
}

/// Speed on arrival after covering `distance` at full throttle.
pub fn full_throttle_speed(speed: f64, distance: f64, a_max: f64, v_max: f64) -> f64 {
    (speed * speed + 2.0 * a_max * distance.max(0.0)).sqrt().min(v_max.max(speed))
}

/// Constant acceleration that covers the distance in the remaining time,
/// limited to `[a_min, a_max]` and to speeds in `[0, v_max]` after one step.
pub fn acceleration_command(speed: f64, target: CommandTarget, limits: &Limits, dt: f64) -> Result<f64, PlanningError> {
    let (distance, tau, hold, v_floor) = match target {
        CommandTarget::Cruise => return Ok(clamp_for_step(limits.a_max, speed, limits, dt)),
        CommandTarget::Reach {
            distance,
            time,
            hold,
            min_arrival_speed,
        } => (distance, time, hold.min(distance), min_arrival_speed),
    };
    if tau <= 0.0 || distance <= 0.0 {
        return Ok(clamp_for_step(limits.a_max, speed, limits, dt));
    }
    let early_by = min_distance(speed, tau, limits.a_min) - distance;
    if early_by > 1e-9 {
        return Err(PlanningError::InfeasibleTarget { early_by });
    }
    let arrival_speed = 2.0 * distance / tau - speed;
    let floor = v_floor.min(full_throttle_speed(speed, distance, limits.a_max, limits.v_max));
    let a = if arrival_speed > limits.v_max && speed < limits.v_max {
        // Ramp to v_max and cruise.
        let slack = limits.v_max * tau - distance;
        if slack > 0.0 {
            (limits.v_max - speed).powi(2) / (2.0 * slack)
        } else {
            limits.a_max
        }
    } else if arrival_speed >= floor.max(0.0) {
        2.0 * (distance - speed * tau) / (tau * tau)
    } else if arrival_speed >= 0.0 && earliest_arrival(speed, distance, limits.a_max, limits.v_max) >= tau {
        limits.a_max
    } else if hold > 0.0 {
        // Wait toward the hold point.
        -speed * speed / (2.0 * hold)
    } else {
        limits.a_min
    };
    Ok(clamp_for_step(a, speed, limits, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LIMITS: Limits = Limits {
        a_min: -4.5,
        a_max: 2.5,
        v_max: 10.0,
    };

    fn reqs(arrivals: &[f64]) -> Vec<ScheduleRequest> {
        arrivals
            .iter()
            .enumerate()
            .map(|(i, &arrival)| ScheduleRequest {
                id: VehicleId(i as u32),
                arrival,
                pinned: false,
            })
            .collect()
    }

    fn targets(s: &CrossingSchedule) -> Vec<f64> {
        s.entries.iter().map(|e| e.target_time).collect()
    }

    #[test]
    fn earliest_arrival_cases() {
        assert_eq!(earliest_arrival(10.0, 50.0, 2.5, 10.0), 5.0);
        assert!((earliest_arrival(0.0, 25.0, 2.0, 10.0) - 5.0).abs() < 1e-12);
        assert_eq!(earliest_arrival(3.0, 0.0, 2.0, 10.0), 0.0);
        // Ramp then cruise: 25 m in 5 s, 25 m more at 10 m/s.
        assert!((earliest_arrival(0.0, 50.0, 2.0, 10.0) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn schedule_recurrence() {
        let all = ConstraintMode::AllConsecutive;
        assert_eq!(targets(&schedule_times(&reqs(&[2.0, 2.0, 2.0]), 1.5, all, |_, _| true)), vec![2.0, 3.5, 5.0]);
        assert_eq!(targets(&schedule_times(&reqs(&[4.2]), 1.5, all, |_, _| true)), vec![4.2]);
        assert_eq!(targets(&schedule_times(&reqs(&[2.0, 10.0]), 1.5, all, |_, _| true)), vec![2.0, 10.0]);
    }

    #[test]
    fn conflicting_only_skips_unrelated_pairs() {
        let mode = ConstraintMode::ConflictingOnly;
        let s = schedule_times(&reqs(&[2.0, 2.0, 2.0]), 1.5, mode, |a, b| (a, b) == (0, 2));
        assert_eq!(targets(&s), vec![2.0, 2.0, 3.5]);
    }

    #[test]
    fn pinned_vehicles_keep_their_time() {
        let mut r = reqs(&[1.0, 0.5, 3.0]);
        r[1].pinned = true;
        let s = schedule_times(&r, 1.5, ConstraintMode::AllConsecutive, |_, _| true);
        assert_eq!(targets(&s), vec![1.0, 0.5, 3.0]);
    }

    #[test]
    fn command_cases() {
        let on_time = CommandTarget::reach(50.0, 5.0, 50.0);
        assert_eq!(acceleration_command(10.0, on_time, &LIMITS, 0.1).unwrap(), 0.0);
        let slow = CommandTarget::reach(50.0, 10.0, 50.0);
        assert!((acceleration_command(10.0, slow, &LIMITS, 0.1).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(acceleration_command(5.0, CommandTarget::Cruise, &LIMITS, 0.1).unwrap(), 2.5);
        assert!((acceleration_command(9.9, CommandTarget::Cruise, &LIMITS, 0.1).unwrap() - 1.0).abs() < 1e-9);
        let late = CommandTarget::reach(10.0, -1.0, 10.0);
        assert_eq!(acceleration_command(5.0, late, &LIMITS, 0.1).unwrap(), 2.5);
    }

    #[test]
    fn ramps_to_speed_limit_then_cruises() {
        let t = CommandTarget::reach(32.0, 4.0, 32.0);
        let a = acceleration_command(5.0, t, &LIMITS, 0.1).unwrap();
        assert!((a - 1.5625).abs() < 1e-12);
        let t1 = 5.0 / a;
        let covered = 5.0 * t1 + 0.5 * a * t1 * t1 + 10.0 * (4.0 - t1);
        assert!((covered - 32.0).abs() < 1e-9);
        let unreachable = CommandTarget::reach(45.0, 4.0, 45.0);
        assert_eq!(acceleration_command(5.0, unreachable, &LIMITS, 0.1).unwrap(), 2.5);
    }

    #[test]
    fn infeasible_when_braking_is_not_enough() {
        let t = CommandTarget::reach(5.0, 3.0, 5.0);
        assert!(matches!(
            acceleration_command(10.0, t, &LIMITS, 0.1),
            Err(PlanningError::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn needs_stop_brakes_to_hold_point() {
        let t = CommandTarget::reach(30.0, 20.0, 20.0);
        let a = acceleration_command(10.0, t, &LIMITS, 0.1).unwrap();
        assert!((a + 2.5).abs() < 1e-12);
    }

    #[test]
    fn arrival_speed_floor_waits_then_goes() {
        let crawl = CommandTarget::Reach {
            distance: 50.0,
            time: 10.0,
            hold: 45.0,
            min_arrival_speed: 5.0,
        };
        let a = acceleration_command(8.5, crawl, &LIMITS, 0.1).unwrap();
        assert!((a + 8.5 * 8.5 / 90.0).abs() < 1e-12);
        let go = CommandTarget::Reach {
            distance: 7.0,
            time: 2.0,
            hold: 7.0,
            min_arrival_speed: 5.0,
        };
        assert_eq!(acceleration_command(0.0, go, &LIMITS, 0.1).unwrap(), 2.5);
        let smooth = CommandTarget::Reach {
            distance: 50.0,
            time: 5.0,
            hold: 45.0,
            min_arrival_speed: 5.0,
        };
        assert_eq!(acceleration_command(10.0, smooth, &LIMITS, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn extra_floor_lifts_targets() {
        let s = schedule_times_with_floor(&reqs(&[1.0, 1.0]), 1.5, ConstraintMode::AllConsecutive, |_, _| true, |i, t| {
            if i == 1 {
                t[0] + 4.0
            } else {
                f64::NEG_INFINITY
            }
        });
        assert_eq!(targets(&s), vec![1.0, 5.0]);
    }

    proptest! {
        #[test]
        fn schedule_respects_gap(arrivals in proptest::collection::vec(0.0..30.0f64, 1..12), gap in 0.1..3.0f64) {
            let s = schedule_times(&reqs(&arrivals), gap, ConstraintMode::AllConsecutive, |_, _| true);
            let t = targets(&s);
            for i in 1..t.len() {
                prop_assert!(t[i] >= t[i - 1] + gap - 1e-9);
                prop_assert!(t[i] >= arrivals[i]);
            }
        }

        #[test]
        fn commands_stay_in_bounds(
            speed in 0.0..10.0f64, distance in 0.0..100.0f64, time in -2.0..30.0f64, hold in 0.0..100.0f64,
            min_arrival_speed in 0.0..10.0f64,
        ) {
            let target = CommandTarget::Reach { distance, time, hold, min_arrival_speed };
            if let Ok(a) = acceleration_command(speed, target, &LIMITS, 0.1) {
                prop_assert!(a >= LIMITS.a_min - 1e-12 && a <= LIMITS.a_max + 1e-12);
                let v = speed + a * 0.1;
                prop_assert!(v >= -1e-9 && v <= LIMITS.v_max + 1e-9);
            }
        }

        #[test]
        fn arrival_is_monotone_in_distance(speed in 0.0..10.0f64, d in 0.0..100.0f64, extra in 0.0..50.0f64) {
            prop_assert!(earliest_arrival(speed, d, 2.5, 10.0) <= earliest_arrival(speed, d + extra, 2.5, 10.0) + 1e-12);
        }
    }
}
