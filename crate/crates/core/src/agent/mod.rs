//! Per-robot controller: behavioral states, the transition table, the
//! wheel-turning model, alignment geometry and the recovery rules.

mod controller;

pub use controller::{
    explore_heading, step_fsm, Actuation, ChainRefs, Delivery, Hints, Intent, OptPass, OptState,
    Perception, SeekPhase, SeekState, StepEvent, StepOutput, TaskPhase,
};

use crate::geom::{wrap_angle, Vec2};
use crate::world::SignalColor;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// The eight behavioral states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RobotState {
    Resting,
    Exploring,
    ReturnToNest,
    Subgoal,
    DecisionMaking,
    Recovery,
    HeuristicOpt1,
    HeuristicOpt2,
}

impl fmt::Display for RobotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RobotState::Resting => "resting",
            RobotState::Exploring => "exploring",
            RobotState::ReturnToNest => "return_to_nest",
            RobotState::Subgoal => "subgoal",
            RobotState::DecisionMaking => "decision_making",
            RobotState::Recovery => "recovery",
            RobotState::HeuristicOpt1 => "heuristic_opt1",
            RobotState::HeuristicOpt2 => "heuristic_opt2",
        };
        f.write_str(s)
    }
}

/// Transition triggers. The letter codes follow the transition overview;
/// `RecoveryContact` is the unlabeled repulsion-contact rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trigger {
    /// a: path formation successfully completed.
    PathComplete,
    /// b: unsuccessful exploration.
    ExplorationFailed,
    /// c: found the goal/subgoal and finished positioning.
    FoundTarget,
    /// d: reached the nest.
    ReachedNest,
    /// e: met another robot in a decision/optimization state.
    MetDecisionRobot,
    /// f: lost visibility of the tracked goal/subgoal in range.
    LostVisibility,
    /// g: anchored subgoal saw the nest-side pattern, starts optimization 1.
    StartOpt1,
    /// h: optimization 1 done and goal-side pattern seen, starts
    /// optimization 2.
    StartOpt2,
    /// i: the resting period has ended.
    RestingOver,
    /// j: found the goal, calls other agents.
    GoalDiscovered,
    /// k: returns to the nest to run / follow task allocation.
    ReturnToAllocate,
    /// l: assigned to the resting task.
    AssignedRest,
    /// Repulsion-range contact around a recovery robot.
    RecoveryContact,
}

impl Trigger {
    pub fn letter(&self) -> char {
        match self {
            Trigger::PathComplete => 'a',
            Trigger::ExplorationFailed => 'b',
            Trigger::FoundTarget => 'c',
            Trigger::ReachedNest => 'd',
            Trigger::MetDecisionRobot => 'e',
            Trigger::LostVisibility => 'f',
            Trigger::StartOpt1 => 'g',
            Trigger::StartOpt2 => 'h',
            Trigger::RestingOver => 'i',
            Trigger::GoalDiscovered => 'j',
            Trigger::ReturnToAllocate => 'k',
            Trigger::AssignedRest => 'l',
            Trigger::RecoveryContact => 'r',
        }
    }
}

/// The fixed edge set of the state machine.
///
/// Besides the lettered edges, `LostVisibility` is also legal out of
/// `Exploring`: visibility loss happens during the positioning approach,
/// before the robot has anchored as a subgoal.
pub fn transition_table() -> &'static [(RobotState, Trigger, RobotState)] {
    use RobotState::*;
    use Trigger::*;
    &[
        (Resting, RestingOver, Exploring),
        (Exploring, ExplorationFailed, ReturnToNest),
        (Exploring, FoundTarget, Subgoal),
        (Exploring, GoalDiscovered, DecisionMaking),
        (Exploring, MetDecisionRobot, DecisionMaking),
        (Exploring, LostVisibility, Recovery),
        (ReturnToNest, ReachedNest, Exploring),
        (DecisionMaking, ReturnToAllocate, ReturnToNest),
        (DecisionMaking, AssignedRest, Resting),
        (Subgoal, LostVisibility, Recovery),
        (Subgoal, StartOpt1, HeuristicOpt1),
        (HeuristicOpt1, StartOpt2, HeuristicOpt2),
        (HeuristicOpt2, PathComplete, Resting),
        (Recovery, RecoveryContact, Subgoal),
    ]
}

/// Look up whether an edge is legal.
pub fn transition_allowed(from: RobotState, trigger: Trigger, to: RobotState) -> bool {
    transition_table()
        .iter()
        .any(|&(f, t, d)| f == from && t == trigger && d == to)
}

/// Wheel-turning thresholds and speed cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelParams {
    pub hard_turn_rad: f64,
    pub soft_turn_rad: f64,
    pub no_turn_rad: f64,
    pub max_speed: f64,
}

impl WheelParams {
    pub fn from_controller(c: &crate::params::ControllerParams) -> Self {
        WheelParams {
            hard_turn_rad: c.hard_turn_angle_threshold_deg.to_radians(),
            soft_turn_rad: c.soft_turn_angle_threshold_deg.to_radians(),
            no_turn_rad: c.no_turn_angle_threshold_deg.to_radians(),
            max_speed: c.max_speed,
        }
    }
}

/// Differential wheel speeds for a heading error in (-pi, pi].
///
/// Below the no-turn threshold both wheels run at full speed; up to the
/// hard-turn threshold the inner wheel is scaled by (1 - |e|/hard); beyond
/// it the robot pivots in place. Positive error steers left.
pub fn wheel_command(heading_error: f64, wp: &WheelParams) -> (f64, f64) {
    let e = heading_error;
    let ae = e.abs();
    if ae < wp.no_turn_rad {
        (wp.max_speed, wp.max_speed)
    } else if ae < wp.hard_turn_rad {
        let inner = wp.max_speed * (1.0 - ae / wp.hard_turn_rad);
        if e > 0.0 {
            (inner, wp.max_speed)
        } else {
            (wp.max_speed, inner)
        }
    } else if e > 0.0 {
        (-wp.max_speed, wp.max_speed)
    } else {
        (wp.max_speed, -wp.max_speed)
    }
}

/// Bearings and ranges to the two alignment anchors, in the robot's body
/// frame: `theta1`/`x_dist` for the goal-side anchor, `theta2`/`y_dist` for
/// the nest-side anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentGeometry {
    pub theta1: f64,
    pub theta2: f64,
    pub x_dist: f64,
    pub y_dist: f64,
}

/// Alignment error e = |pi - angle between the two anchor bearings|.
/// Zero iff the robot sits on the segment between its anchors.
pub fn alignment_error(geom: &AlignmentGeometry) -> f64 {
    let delta = wrap_angle(geom.theta1 - geom.theta2).abs();
    (PI - delta).abs()
}

/// Loss-of-visibility check for a tracked goal/subgoal. A loss event needs
/// the target to have been visible before and to disappear while still
/// within the visibility range; a target that merely drifted out of range
/// is not a loss.
pub fn recovery_check(
    previously_visible: bool,
    target_visible: bool,
    distance_to_target: f64,
    visibility_range: f64,
) -> bool {
    previously_visible && !target_visible && distance_to_target <= visibility_range
}

/// Repulsion exerted by a recovery robot: a unit push directly away, only
/// within `repulsion_range`. Coincident points push along +x.
pub fn recovery_repulsion(
    recovery_pos: Vec2,
    other_pos: Vec2,
    repulsion_range: f64,
) -> Option<Vec2> {
    let d = other_pos - recovery_pos;
    let dist = d.norm();
    if dist > repulsion_range {
        return None;
    }
    if dist < 1e-12 {
        return Some(Vec2::new(1.0, 0.0));
    }
    Some(d.scale(1.0 / dist))
}

/// LED color as a function of behavioral state, the goal-founder flag and
/// the positioning sub-mode (positioning robots signal white).
pub fn led_for(state: RobotState, goal_founder: bool, seeking: bool) -> SignalColor {
    if seeking && state == RobotState::Exploring {
        return SignalColor::White;
    }
    match state {
        RobotState::Resting => SignalColor::White,
        RobotState::Exploring => {
            if goal_founder {
                SignalColor::DashedMagenta
            } else {
                SignalColor::Black
            }
        }
        RobotState::ReturnToNest => {
            if goal_founder {
                SignalColor::DashedMagenta
            } else {
                SignalColor::Cyan
            }
        }
        RobotState::DecisionMaking => {
            if goal_founder {
                SignalColor::DashedMagenta
            } else {
                SignalColor::IntenseMagenta
            }
        }
        RobotState::Subgoal => SignalColor::Red,
        RobotState::Recovery => SignalColor::Magenta,
        RobotState::HeuristicOpt1 => SignalColor::Blue,
        RobotState::HeuristicOpt2 => SignalColor::RedYellow,
    }
}

/// Founder-side bookkeeping for one allocation round.
#[derive(Debug, Clone, PartialEq)]
pub struct FounderRound {
    pub n_required: u32,
    /// Exploring ticks at goal discovery; broadcast with every request.
    pub discovery_ticks: u32,
    /// Distinct responder ids in arrival order.
    pub acks: Vec<u32>,
    pub opened_tick: u64,
    pub last_ack_tick: u64,
    /// Set once enough acks arrived or the round stalled.
    pub closed: bool,
    /// Ids still owed a grant frame.
    pub pending_grants: Vec<u32>,
    /// Remaining termination broadcasts.
    pub termination_left: u32,
    pub done: bool,
}

/// One robot, controller state included.
#[derive(Debug, Clone)]
pub struct Robot {
    pub id: u32,
    pub pos: Vec2,
    pub heading: f64,
    pub state: RobotState,
    pub led: SignalColor,
    pub goal_founder: bool,
    pub exploring_ticks: u32,
    /// `None` means resting until the run ends (resting task).
    pub resting_ticks_remaining: Option<u32>,
    pub exploration_budget: u32,
    pub anchored_pos: Option<Vec2>,
    pub stream_id: u64,
    pub rng: ChaCha8Rng,

    /// Positioning sub-mode while exploring.
    pub seek: Option<SeekState>,
    /// Alignment sub-mode while in an optimization state.
    pub opt: Option<OptState>,
    /// Assigned to (or performing) the path formation task.
    pub path_task: bool,
    /// Acknowledged the current allocation request.
    pub acked: bool,
    /// Budget granted with the path-formation assignment.
    pub granted_budget: Option<u32>,
    pub founder_round: Option<FounderRound>,
    /// Ticks spent searching for a place at the nest.
    pub nest_loiter_ticks: u32,
    /// What a recovery robot lost, and where it last saw it.
    pub recovery_target: Option<(crate::world::BlobSource, Vec2)>,
    /// Exploring ticks at the moment the goal was discovered.
    pub discovery_ticks: Option<u32>,
    /// Accumulated heading perturbation for the current excursion.
    pub explore_bias: f64,
    /// Cooldown between acknowledgment resends.
    pub ack_cooldown: u32,
    /// Ticks left walking into the nest before settling into the resting
    /// task.
    pub settle_ticks: Option<u32>,
    /// Sticky wall-slide direction: +1 / -1 while skirting an obstacle.
    pub slide_sign: Option<f64>,
    /// Ticks before this robot may claim the tip again after giving up.
    pub seek_cooldown: u32,
}

impl Robot {
    pub fn new(id: u32, pos: Vec2, heading: f64, master_seed: u64, initial_budget: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(id as u64 + 1);
        Robot {
            id,
            pos,
            heading,
            state: RobotState::Resting,
            led: led_for(RobotState::Resting, false, false),
            goal_founder: false,
            exploring_ticks: 0,
            resting_ticks_remaining: Some(1),
            exploration_budget: initial_budget,
            anchored_pos: None,
            stream_id: id as u64 + 1,
            rng,
            seek: None,
            opt: None,
            path_task: false,
            acked: false,
            granted_budget: None,
            founder_round: None,
            nest_loiter_ticks: 0,
            recovery_target: None,
            discovery_ticks: None,
            explore_bias: 0.0,
            ack_cooldown: 0,
            settle_ticks: None,
            slide_sign: None,
            seek_cooldown: 0,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self.state, RobotState::Subgoal | RobotState::Recovery)
    }

    /// Refresh the LED from the current state; called after every step.
    pub fn refresh_led(&mut self) {
        self.led = led_for(self.state, self.goal_founder, self.seek.is_some());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_contains_expected_edges() {
        assert!(transition_allowed(
            RobotState::Resting,
            Trigger::RestingOver,
            RobotState::Exploring
        ));
        assert!(transition_allowed(
            RobotState::Exploring,
            Trigger::ExplorationFailed,
            RobotState::ReturnToNest
        ));
        assert!(transition_allowed(
            RobotState::HeuristicOpt2,
            Trigger::PathComplete,
            RobotState::Resting
        ));
        assert!(transition_allowed(
            RobotState::Recovery,
            Trigger::RecoveryContact,
            RobotState::Subgoal
        ));
    }

    #[test]
    fn table_rejects_absent_edges() {
        assert!(!transition_allowed(
            RobotState::Resting,
            Trigger::FoundTarget,
            RobotState::Subgoal
        ));
        assert!(!transition_allowed(
            RobotState::Resting,
            Trigger::FoundTarget,
            RobotState::Exploring
        ));
    }

    #[test]
    fn wheel_examples() {
        let wp = WheelParams::from_controller(&crate::params::ControllerParams::default());
        assert_eq!(wheel_command(0.0, &wp), (10.0, 10.0));
        assert_eq!(wheel_command(PI, &wp), (-10.0, 10.0));
        let (l, r) = wheel_command(45f64.to_radians(), &wp);
        assert!((l - 5.0).abs() < 1e-12);
        assert!((r - 10.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_examples() {
        // anchors at bearings 0 and pi/2
        let g = AlignmentGeometry {
            theta1: 0.0,
            theta2: PI / 2.0,
            x_dist: 1.0,
            y_dist: 1.0,
        };
        assert!((alignment_error(&g) - PI / 2.0).abs() < 1e-12);
        // opposite bearings: collinear between the anchors
        let g = AlignmentGeometry {
            theta1: 0.0,
            theta2: PI,
            x_dist: 0.5,
            y_dist: 0.5,
        };
        assert!(alignment_error(&g) < 1e-12);
    }

    #[test]
    fn recovery_check_cases() {
        assert!(!recovery_check(true, true, 0.5, 1.0));
        assert!(recovery_check(true, false, 0.9, 1.0));
        assert!(!recovery_check(false, false, 1.2, 1.0));
        assert!(!recovery_check(true, false, 1.2, 1.0));
    }

    #[test]
    fn repulsion_cases() {
        let v = recovery_repulsion(Vec2::ZERO, Vec2::new(0.1, 0.0), 0.2).unwrap();
        assert!((v.x - 1.0).abs() < 1e-12);
        assert!(recovery_repulsion(Vec2::ZERO, Vec2::new(0.25, 0.0), 0.2).is_none());
        let v = recovery_repulsion(Vec2::ZERO, Vec2::ZERO, 0.2).unwrap();
        assert_eq!(v, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn led_mapping() {
        assert_eq!(led_for(RobotState::Exploring, false, false), SignalColor::Black);
        assert_eq!(led_for(RobotState::Exploring, false, true), SignalColor::White);
        assert_eq!(
            led_for(RobotState::Exploring, true, false),
            SignalColor::DashedMagenta
        );
        assert_eq!(led_for(RobotState::Subgoal, false, false), SignalColor::Red);
        assert_eq!(led_for(RobotState::HeuristicOpt1, false, false), SignalColor::Blue);
        assert_eq!(
            led_for(RobotState::HeuristicOpt2, false, false),
            SignalColor::RedYellow
        );
        assert_eq!(led_for(RobotState::Recovery, false, false), SignalColor::Magenta);
        assert_eq!(led_for(RobotState::Resting, false, false), SignalColor::White);
    }

    proptest! {
        /// Mirrored heading error swaps the wheels.
        #[test]
        fn wheel_command_is_odd(e in -3.14f64..3.14) {
            let wp = WheelParams::from_controller(&crate::params::ControllerParams::default());
            let (l, r) = wheel_command(e, &wp);
            let (ml, mr) = wheel_command(-e, &wp);
            prop_assert!((l - mr).abs() < 1e-12);
            prop_assert!((r - ml).abs() < 1e-12);
        }

        /// Alignment error is invariant under rigid rotation of the whole
        /// configuration.
        #[test]
        fn alignment_rotation_invariant(t1 in -3.14f64..3.14, t2 in -3.14f64..3.14, rot in -3.14f64..3.14) {
            let base = AlignmentGeometry { theta1: t1, theta2: t2, x_dist: 1.0, y_dist: 1.0 };
            let rotated = AlignmentGeometry {
                theta1: wrap_angle(t1 + rot),
                theta2: wrap_angle(t2 + rot),
                x_dist: 1.0,
                y_dist: 1.0,
            };
            prop_assert!((alignment_error(&base) - alignment_error(&rotated)).abs() < 1e-9);
        }
    }
}
