//! End-to-end engine checks: determinism, trace auditing, per-tick
//! invariants and the scripted path-formation fixture.

use swarmpath::agent::{led_for, transition_table, Robot, RobotState, Trigger};
use swarmpath::geom::Vec2;
use swarmpath::params::SimParams;
use swarmpath::sim::{trace_hash, EventKind, RunStatus, Simulation};
use swarmpath::world::{ArenaSpec, Disk};

fn open_arena() -> ArenaSpec {
    ArenaSpec {
        width: 8.0,
        height: 4.0,
        obstacles: vec![],
        nest: Disk {
            center: Vec2::new(1.0, 2.0),
            radius: 0.25,
        },
        goal: Disk {
            center: Vec2::new(6.0, 2.0),
            radius: 0.25,
        },
        light_source: None,
        reference_intensity: 1.0,
    }
}

fn small_params(max_ticks: u64) -> SimParams {
    let mut p = SimParams::default();
    p.max_ticks = max_ticks;
    p
}

#[test]
fn same_seed_same_trace() {
    let run = |threads: usize| {
        let mut p = small_params(4000);
        p.threads = threads;
        let mut sim = Simulation::new(open_arena(), p, 14, 123).unwrap();
        let out = sim.run().unwrap();
        out.trace_hash
    };
    let a = run(1);
    let b = run(1);
    assert_eq!(a, b, "serial reruns must agree");
    let c = run(4);
    assert_eq!(a, c, "threaded evaluation must agree with serial");
}

#[test]
fn different_seeds_different_traces() {
    let hash = |seed: u64| {
        let mut sim = Simulation::new(open_arena(), small_params(1500), 10, seed).unwrap();
        sim.run().unwrap().trace_hash
    };
    let mut distinct = std::collections::HashSet::new();
    for seed in 0..20 {
        distinct.insert(hash(seed));
    }
    assert!(distinct.len() >= 19, "seeds should disperse: {}", distinct.len());
}

/// Every observed state transition must be a legal edge.
#[test]
fn trace_auditor_state_edges() {
    let mut sim = Simulation::new(open_arena(), small_params(30_000), 20, 5).unwrap();
    let _ = sim.run().unwrap();
    let legal = transition_table();
    let mut observed = 0;
    for e in &sim.events.events {
        if let EventKind::StateChange { from, to, trigger } = &e.kind {
            observed += 1;
            assert!(
                legal
                    .iter()
                    .any(|(f, t, d)| f == from && d == to && t.letter() == *trigger),
                "illegal edge {from} -> {to} ({trigger})"
            );
        }
    }
    assert!(observed > 20, "expected a busy trace, saw {observed}");
}

/// LED always matches the state mapping; anchored robots never move.
#[test]
fn led_and_immobility_invariants_over_trace() {
    let mut sim = Simulation::new(open_arena(), small_params(12_000), 24, 9).unwrap();
    let mut prev: Vec<(RobotState, Vec2)> = sim.robots.iter().map(|r| (r.state, r.pos)).collect();
    for _ in 0..sim.params.max_ticks {
        sim.step();
        for r in &sim.robots {
            assert_eq!(
                r.led,
                led_for(r.state, r.goal_founder, r.seek.is_some()),
                "LED mismatch for robot {} in {:?}",
                r.id,
                r.state
            );
            let (was_state, was_pos) = prev[r.id as usize];
            let anchored_still = matches!(
                was_state,
                RobotState::Subgoal | RobotState::Recovery
            ) && was_state == r.state;
            if anchored_still {
                assert_eq!(was_pos, r.pos, "anchored robot {} moved", r.id);
            }
        }
        prev = sim.robots.iter().map(|r| (r.state, r.pos)).collect();
        if sim.tick >= 12_000 {
            break;
        }
    }
}

/// Scripted fixture: one robot parked next to the goal anchors, the chain
/// closes at once (goal 1.5 m from the nest), both passes converge, and the
/// whole run finishes at a reproducible tick within hand-computed bounds.
#[test]
fn scripted_fixture_path_forms_at_known_tick() {
    let mut arena = open_arena();
    arena.goal.center = Vec2::new(2.5, 2.0); // 1.5 m from the nest
    let run = || {
        let mut p = small_params(20_000);
        p.task_allocation = false;
        let mut sim = Simulation::new(arena.clone(), p, 3, 11).unwrap();
        // park robot 0 facing the goal, inside the detection trigger
        sim.robots[0].pos = Vec2::new(2.26, 2.0);
        sim.robots[0].heading = 0.0;
        sim.robots[0].resting_ticks_remaining = Some(0);
        // keep the other two far out of the way and asleep
        sim.robots[1].pos = Vec2::new(7.0, 0.5);
        sim.robots[2].pos = Vec2::new(7.0, 3.5);
        for i in 1..3 {
            sim.robots[i].resting_ticks_remaining = None;
        }
        sim.run().unwrap()
    };
    let out = run();
    assert_eq!(out.status, RunStatus::PathFormed);
    let anchors = out.chain_anchors.expect("one-anchor chain");
    assert_eq!(anchors.len(), 1);
    // the robot walks from 0.24 m to ~0.70 m of the goal at 0.01 m/tick,
    // then the two alignment passes run: expect well under 300 ticks and
    // at least the ~46 ticks of straight-line travel
    assert!(
        out.ticks_elapsed >= 46 && out.ticks_elapsed <= 300,
        "ticks {}",
        out.ticks_elapsed
    );
    // replay oracle: the tick count is exactly reproducible
    let again = run();
    assert_eq!(again.ticks_elapsed, out.ticks_elapsed);
    assert_eq!(again.trace_hash, out.trace_hash);
}

/// The anchored subgoal sits 0.70 +- 0.02 m from its target.
#[test]
fn scripted_fixture_anchor_distance() {
    let mut arena = open_arena();
    arena.goal.center = Vec2::new(2.5, 2.0);
    let mut p = small_params(20_000);
    p.task_allocation = false;
    let mut sim = Simulation::new(arena.clone(), p, 3, 11).unwrap();
    sim.robots[0].pos = Vec2::new(2.26, 2.0);
    sim.robots[0].heading = 0.0;
    sim.robots[0].resting_ticks_remaining = Some(0);
    sim.robots[1].pos = Vec2::new(7.0, 0.5);
    sim.robots[2].pos = Vec2::new(7.0, 3.5);
    for i in 1..3 {
        sim.robots[i].resting_ticks_remaining = None;
    }
    let _ = sim.run().unwrap();
    let anchored: Vec<&Robot> = sim
        .robots
        .iter()
        .filter(|r| r.anchored_pos.is_some())
        .collect();
    assert_eq!(anchored.len(), 1);
    // raw anchor position (before alignment) is recorded in the event log
    let mut raw_anchor = None;
    for e in &sim.events.events {
        if let EventKind::Anchored { x, y, .. } = e.kind {
            raw_anchor = Some(Vec2::new(x, y));
        }
    }
    let d = raw_anchor.unwrap().distance(arena.goal.center);
    assert!(
        (d - 0.70).abs() <= 0.021,
        "anchor distance {d} outside the 0.70 +- 0.02 band"
    );
}

/// Quiescent step: all robots resting forever leave poses untouched.
#[test]
fn quiescent_step_keeps_poses() {
    let mut sim = Simulation::new(open_arena(), small_params(100), 6, 2).unwrap();
    for r in &mut sim.robots {
        r.resting_ticks_remaining = None;
    }
    let before: Vec<Vec2> = sim.robots.iter().map(|r| r.pos).collect();
    sim.step();
    sim.step();
    let after: Vec<Vec2> = sim.robots.iter().map(|r| r.pos).collect();
    assert_eq!(before, after);
    assert_eq!(sim.tick, 2);
}

/// Messages reach exactly the robots in range with line of sight at the
/// send tick: an occluded or distant decision robot never acks.
#[test]
fn delivery_respects_range_and_occlusion() {
    let mut arena = open_arena();
    arena
        .obstacles
        .push(swarmpath::geom::Rect::from_bounds(1.45, 2.3, 1.55, 3.4));
    let mut p = small_params(400);
    p.task_allocation = true;
    let mut sim = Simulation::new(arena, p, 4, 7).unwrap();
    // robot 0: founder-to-be at the nest with the round about to open
    sim.robots[0].pos = Vec2::new(1.0, 2.0);
    sim.robots[0].state = RobotState::DecisionMaking;
    sim.robots[0].goal_founder = true;
    sim.robots[0].discovery_ticks = Some(200);
    sim.robots[0].refresh_led();
    sim.alloc.founder = Some(0);
    // robot 1: in range, clear line of sight
    sim.robots[1].pos = Vec2::new(1.6, 2.0);
    sim.robots[1].state = RobotState::DecisionMaking;
    sim.robots[1].refresh_led();
    // robot 2: in range but occluded by the obstacle
    sim.robots[2].pos = Vec2::new(1.75, 2.9);
    sim.robots[2].state = RobotState::DecisionMaking;
    sim.robots[2].refresh_led();
    // robot 3: out of range
    sim.robots[3].pos = Vec2::new(3.0, 2.0);
    sim.robots[3].state = RobotState::DecisionMaking;
    sim.robots[3].refresh_led();
    for r in &mut sim.robots {
        r.resting_ticks_remaining = None;
    }
    for _ in 0..40 {
        sim.step();
    }
    let ackers: std::collections::HashSet<u32> = sim
        .events
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::FrameSent { to: Some(0), .. } => e.robot_id,
            _ => None,
        })
        .collect();
    assert!(ackers.contains(&1), "clear-sight robot must ack");
    assert!(!ackers.contains(&2), "occluded robot must not hear the request");
    // robot 3 may wander into range eventually; check it did not ack in the
    // first ticks while still  far away
    let early_ack_3 = sim.events.events.iter().any(|e| {
        e.robot_id == Some(3)
            && e.tick < 10
            && matches!(&e.kind, EventKind::FrameSent { to: Some(0), .. })
    });
    assert!(!early_ack_3, "distant robot acked before it could hear");
}

/// Triggers recorded in traces use the documented letter codes.
#[test]
fn trigger_letters_are_stable() {
    assert_eq!(Trigger::PathComplete.letter(), 'a');
    assert_eq!(Trigger::ExplorationFailed.letter(), 'b');
    assert_eq!(Trigger::FoundTarget.letter(), 'c');
    assert_eq!(Trigger::ReachedNest.letter(), 'd');
    assert_eq!(Trigger::MetDecisionRobot.letter(), 'e');
    assert_eq!(Trigger::LostVisibility.letter(), 'f');
    assert_eq!(Trigger::StartOpt1.letter(), 'g');
    assert_eq!(Trigger::StartOpt2.letter(), 'h');
    assert_eq!(Trigger::RestingOver.letter(), 'i');
    assert_eq!(Trigger::GoalDiscovered.letter(), 'j');
    assert_eq!(Trigger::ReturnToAllocate.letter(), 'k');
    assert_eq!(Trigger::AssignedRest.letter(), 'l');
}

/// The digest is a pure function of the event log.
#[test]
fn trace_hash_matches_recomputation() {
    let mut sim = Simulation::new(open_arena(), small_params(2000), 8, 3).unwrap();
    let out = sim.run().unwrap();
    assert_eq!(out.trace_hash, trace_hash(&sim.events));
}
