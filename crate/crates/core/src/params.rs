//! Controller and engine parameters with their defaults.

use serde::{Deserialize, Serialize};

/// Controller parameter set exposed in scenario files. Angle fields are in
/// degrees and time fields in seconds; the engine converts to radians and
/// ticks at the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub go_straight_angle_range_deg: (f64, f64),
    /// Proximity tolerance below which readings are ignored and the robot
    /// keeps going straight.
    pub delta: f64,
    pub minimum_resting_time_s: f64,
    pub initial_exploring_time_s: f64,
    pub minimum_search_for_place_in_nest_s: f64,
    pub hard_turn_angle_threshold_deg: f64,
    pub soft_turn_angle_threshold_deg: f64,
    pub no_turn_angle_threshold_deg: f64,
    /// Wheel speed in speed units per second (one unit = `speed_unit_m`).
    pub max_speed: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            go_straight_angle_range_deg: (-5.0, 5.0),
            delta: 0.1,
            minimum_resting_time_s: 0.1,
            initial_exploring_time_s: 1.0,
            minimum_search_for_place_in_nest_s: 5.0,
            hard_turn_angle_threshold_deg: 90.0,
            soft_turn_angle_threshold_deg: 70.0,
            no_turn_angle_threshold_deg: 10.0,
            max_speed: 10.0,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.go_straight_angle_range_deg;
        if lo > hi {
            return Err("go_straight_angle_range_deg is inverted".into());
        }
        if !(self.no_turn_angle_threshold_deg < self.soft_turn_angle_threshold_deg
            && self.soft_turn_angle_threshold_deg < self.hard_turn_angle_threshold_deg)
        {
            return Err("turn thresholds must satisfy no < soft < hard".into());
        }
        if self.max_speed <= 0.0 {
            return Err("max_speed must be positive".into());
        }
        Ok(())
    }
}

/// Full simulation parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub controller: ControllerParams,

    /// Seconds per tick; the only clock in the system.
    pub tick_seconds: f64,
    /// Meters per wheel speed unit per second. The default makes the
    /// Table-style max speed of 10 units equal 0.1 m/s.
    pub speed_unit_m: f64,
    pub robot_radius: f64,
    pub axle_length: f64,

    pub camera_range: f64,
    pub rab_range: f64,

    /// Distance at which a goal/subgoal sighting switches the robot into
    /// positioning behavior.
    pub detect_range: f64,
    /// Target anchoring distance from the tracked goal/subgoal.
    pub anchor_range: f64,
    pub anchor_tolerance: f64,
    /// Repulsion radius around a recovery robot.
    pub repulsion_range: f64,

    /// Alignment convergence threshold in radians.
    pub align_epsilon: f64,
    /// Nominal optimization step in meters (per-tick motion is additionally
    /// capped by wheel speed).
    pub opt_step: f64,

    /// Exploration budget multiplier applied after each failed excursion.
    pub budget_growth: f64,
    /// Ticks a positioning claim may be held without anchoring.
    pub claim_timeout_ticks: u32,
    /// Ticks without a new ack after which the founder closes the round.
    pub allocation_stall_ticks: u32,

    pub task_allocation: bool,
    /// Complexity margin added to the required robot count.
    pub allocation_delta: f64,

    /// Radius around the nest center that counts as "at the nest".
    pub nest_arrival_radius: f64,

    pub max_ticks: u64,
    /// Ticks without a state transition or >1 mm displacement that count as
    /// a deadlock.
    pub deadlock_window: u64,

    /// Worker threads for controller evaluation; 1 means strictly serial.
    pub threads: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            controller: ControllerParams::default(),
            tick_seconds: 0.1,
            speed_unit_m: 0.01,
            robot_radius: 0.085,
            axle_length: 0.14,
            camera_range: 1.0,
            rab_range: 1.0,
            detect_range: 0.30,
            anchor_range: 0.70,
            anchor_tolerance: 0.02,
            repulsion_range: 0.20,
            align_epsilon: 0.05,
            opt_step: 0.05,
            budget_growth: 1.5,
            claim_timeout_ticks: 1500,
            allocation_stall_ticks: 3000,
            task_allocation: true,
            allocation_delta: 2.0,
            nest_arrival_radius: 0.60,
            max_ticks: 300_000,
            deadlock_window: 5000,
            threads: 1,
        }
    }
}

impl SimParams {
    /// Convert seconds to whole ticks, at least one.
    pub fn ticks(&self, seconds: f64) -> u32 {
        ((seconds / self.tick_seconds).round() as u32).max(1)
    }

    /// Linear speed in m/s at full wheel command.
    pub fn speed_mps(&self) -> f64 {
        self.controller.max_speed * self.speed_unit_m
    }

    /// Maximum displacement per tick in meters.
    pub fn step_per_tick(&self) -> f64 {
        self.speed_mps() * self.tick_seconds
    }

    pub fn initial_budget_ticks(&self) -> u32 {
        self.ticks(self.controller.initial_exploring_time_s)
    }

    pub fn min_rest_ticks(&self) -> u32 {
        self.ticks(self.controller.minimum_resting_time_s)
    }

    pub fn nest_loiter_ticks(&self) -> u32 {
        self.ticks(self.controller.minimum_search_for_place_in_nest_s)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.controller.validate()?;
        if self.tick_seconds <= 0.0 {
            return Err("tick_seconds must be positive".into());
        }
        if self.robot_radius <= 0.0 {
            return Err("robot_radius must be positive".into());
        }
        if self.anchor_range <= self.detect_range {
            return Err("anchor_range must exceed detect_range".into());
        }
        if self.camera_range < self.anchor_range + self.anchor_tolerance {
            return Err("camera_range must cover the anchoring band".into());
        }
        if self.allocation_delta < 0.0 {
            return Err("allocation_delta must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimParams::default().validate().unwrap();
    }

    #[test]
    fn tick_conversion() {
        let p = SimParams::default();
        assert_eq!(p.ticks(0.1), 1);
        assert_eq!(p.ticks(5.0), 50);
        assert_eq!(p.ticks(1.0), 10);
        assert!((p.speed_mps() - 0.1).abs() < 1e-12);
        assert!((p.step_per_tick() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn bad_thresholds_rejected() {
        let mut p = SimParams::default();
        p.controller.no_turn_angle_threshold_deg = 80.0;
        assert!(p.validate().is_err());
    }
}
