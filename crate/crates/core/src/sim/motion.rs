//! Kinematics integration and iterative collision separation.

use crate::agent::{Actuation, Robot, RobotState};
use crate::geom::{wrap_angle, Vec2};
use crate::params::SimParams;
use crate::world::ArenaSpec;

/// Robots in these states never yield to collisions.
fn immovable(r: &Robot) -> bool {
    matches!(
        r.state,
        RobotState::Subgoal
            | RobotState::Recovery
            | RobotState::HeuristicOpt1
            | RobotState::HeuristicOpt2
    )
}

/// Integrate one tick of motion for a robot.
///
/// Wheel commands use exact arc integration so the trajectory is
/// independent of tick subdivision; glides are straight displacements
/// capped at wheel speed, halved until obstacle-free.
pub fn apply_actuation(robot: &mut Robot, act: &Actuation, arena: &ArenaSpec, params: &SimParams) {
    match act {
        Actuation::Hold => {}
        Actuation::Wheels { left, right } => {
            let cap = params.controller.max_speed;
            let l = left.clamp(-cap, cap) * params.speed_unit_m;
            let r = right.clamp(-cap, cap) * params.speed_unit_m;
            let dt = params.tick_seconds;
            let v = 0.5 * (l + r);
            let omega = (r - l) / params.axle_length;
            if omega.abs() < 1e-9 {
                robot.pos += Vec2::from_angle(robot.heading).scale(v * dt);
            } else {
                let radius = v / omega;
                let h0 = robot.heading;
                let h1 = h0 + omega * dt;
                robot.pos.x += radius * (h1.sin() - h0.sin());
                robot.pos.y += radius * (h0.cos() - h1.cos());
                robot.heading = wrap_angle(h1);
            }
        }
        Actuation::Glide { delta } => {
            let cap = params.step_per_tick();
            let norm = delta.norm();
            if norm < 1e-12 {
                return;
            }
            let mut step = delta.scale((norm.min(cap)) / norm);
            // halve into free space near obstacles
            for _ in 0..8 {
                let candidate = robot.pos + step;
                let blocked = arena
                    .obstacles
                    .iter()
                    .any(|ob| ob.distance_to(candidate) < params.robot_radius)
                    || candidate.x < params.robot_radius
                    || candidate.y < params.robot_radius
                    || candidate.x > arena.width - params.robot_radius
                    || candidate.y > arena.height - params.robot_radius;
                if !blocked {
                    robot.pos = candidate;
                    if let Some(anchor) = robot.anchored_pos.as_mut() {
                        *anchor = robot.pos;
                    }
                    return;
                }
                step = step.scale(0.5);
                if step.norm() < 1e-4 {
                    return;
                }
            }
        }
    }
    if let Some(anchor) = robot.anchored_pos.as_mut() {
        *anchor = robot.pos;
    }
}

/// Iterative minimum-translation separation, applied in id order.
///
/// Movers yield to static chain robots; unresolvable movers revert to their
/// pre-move position.
pub fn resolve_collisions(
    robots: &mut [Robot],
    prev_pos: &[Vec2],
    arena: &ArenaSpec,
    params: &SimParams,
    _claim_holder: Option<u32>,
) {
    let n = robots.len();
    let r = params.robot_radius;
    let min_sep = 2.0 * r;

    for _pass in 0..8 {
        let mut moved_any = false;

        // robot-obstacle and bounds, in id order
        for robot in robots.iter_mut() {
            if immovable(robot) {
                continue;
            }
            let clamped = Vec2::new(
                robot.pos.x.clamp(r, arena.width - r),
                robot.pos.y.clamp(r, arena.height - r),
            );
            if clamped != robot.pos {
                robot.pos = clamped;
                moved_any = true;
            }
            for ob in &arena.obstacles {
                let cp = ob.closest_point(robot.pos);
                let d = robot.pos.distance(cp);
                if d >= r {
                    continue;
                }
                moved_any = true;
                if d > 1e-9 {
                    robot.pos = cp + (robot.pos - cp).scale(r / d);
                } else {
                    // center inside the rectangle: escape along the thinnest side
                    let exits = [
                        (robot.pos.x - ob.min.x + r, Vec2::new(-1.0, 0.0)),
                        (ob.max.x - robot.pos.x + r, Vec2::new(1.0, 0.0)),
                        (robot.pos.y - ob.min.y + r, Vec2::new(0.0, -1.0)),
                        (ob.max.y - robot.pos.y + r, Vec2::new(0.0, 1.0)),
                    ];
                    let (dist, dir) = exits
                        .iter()
                        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                        .copied()
                        .unwrap();
                    robot.pos += dir.scale(dist + 1e-6);
                }
            }
        }

        // robot-robot: sweep on x to collect candidate pairs, then resolve
        // in id order
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            robots[a]
                .pos
                .x
                .partial_cmp(&robots[b].pos.x)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (oi, &i) in order.iter().enumerate() {
            for &j in order.iter().skip(oi + 1) {
                if robots[j].pos.x - robots[i].pos.x > min_sep {
                    break;
                }
                if robots[i].pos.distance(robots[j].pos) < min_sep {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
        pairs.sort_unstable();
        for (i, j) in pairs {
            let d = robots[j].pos - robots[i].pos;
            let dist = d.norm();
            if dist >= min_sep {
                continue;
            }
            moved_any = true;
            let dir = if dist > 1e-9 {
                d.scale(1.0 / dist)
            } else {
                Vec2::new(1.0, 0.0)
            };
            let overlap = min_sep - dist + 1e-6;
            let i_static = immovable(&robots[i]);
            let j_static = immovable(&robots[j]);
            // Resting robots yield fully so the idle pack never walls off
            // the nest for working robots.
            let i_rest = robots[i].state == RobotState::Resting;
            let j_rest = robots[j].state == RobotState::Resting;
            if i_static && j_static {
                continue;
            } else if i_static {
                robots[j].pos += dir.scale(overlap);
            } else if j_static {
                robots[i].pos += dir.scale(-overlap);
            } else if i_rest && !j_rest {
                robots[i].pos += dir.scale(-overlap);
            } else if j_rest && !i_rest {
                robots[j].pos += dir.scale(overlap);
            } else {
                robots[i].pos += dir.scale(-overlap * 0.5);
                robots[j].pos += dir.scale(overlap * 0.5);
            }
        }

        if !moved_any {
            return;
        }
    }

    // Hard containment: bounds and obstacles always hold. Project out of
    // any residual overlap; revert to the pre-tick position only when the
    // projection cannot resolve it.
    for i in 0..n {
        if immovable(&robots[i]) {
            continue;
        }
        let p = &mut robots[i].pos;
        p.x = p.x.clamp(r, arena.width - r);
        p.y = p.y.clamp(r, arena.height - r);
        for ob in &arena.obstacles {
            let cp = ob.closest_point(robots[i].pos);
            let d = robots[i].pos.distance(cp);
            if d >= r {
                continue;
            }
            if d > 1e-9 {
                robots[i].pos = cp + (robots[i].pos - cp).scale(r / d);
            } else {
                robots[i].pos = prev_pos[i];
            }
        }
        let p = &mut robots[i].pos;
        p.x = p.x.clamp(r, arena.width - r);
        p.y = p.y.clamp(r, arena.height - r);
        if arena
            .obstacles
            .iter()
            .any(|ob| ob.distance_to(robots[i].pos) < r - 1e-9)
        {
            robots[i].pos = prev_pos[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Disk;

    fn arena() -> ArenaSpec {
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

    fn robot_at(id: u32, x: f64, y: f64) -> Robot {
        let mut r = Robot::new(id, Vec2::new(x, y), 0.0, 1, 10);
        r.state = RobotState::Exploring;
        r.resting_ticks_remaining = None;
        r
    }

    #[test]
    fn straight_drive_displacement() {
        let params = SimParams::default();
        let a = arena();
        let mut r = robot_at(0, 2.0, 2.0);
        apply_actuation(
            &mut r,
            &Actuation::Wheels {
                left: 10.0,
                right: 10.0,
            },
            &a,
            &params,
        );
        // max_speed (10 units) * 0.01 m/unit-s * 0.1 s = 0.01 m
        assert!((r.pos.x - 2.01).abs() < 1e-12);
        assert!((r.pos.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pivot_preserves_position() {
        let params = SimParams::default();
        let a = arena();
        let mut r = robot_at(0, 2.0, 2.0);
        apply_actuation(
            &mut r,
            &Actuation::Wheels {
                left: -10.0,
                right: 10.0,
            },
            &a,
            &params,
        );
        assert!((r.pos.x - 2.0).abs() < 1e-12);
        assert!((r.pos.y - 2.0).abs() < 1e-12);
        assert!(r.heading > 0.0);
    }

    #[test]
    fn overlapping_pair_separates() {
        let params = SimParams::default();
        let a = arena();
        let mut robots = vec![robot_at(0, 2.0, 2.0), robot_at(1, 2.05, 2.0)];
        let prev: Vec<Vec2> = robots.iter().map(|r| r.pos).collect();
        resolve_collisions(&mut robots, &prev, &a, &params, None);
        assert!(robots[0].pos.distance(robots[1].pos) >= 2.0 * params.robot_radius - 1e-9);
    }

    #[test]
    fn mover_yields_to_static_anchor() {
        let params = SimParams::default();
        let a = arena();
        let mut anchor = robot_at(0, 2.0, 2.0);
        anchor.state = RobotState::Subgoal;
        anchor.anchored_pos = Some(anchor.pos);
        let mover = robot_at(1, 2.05, 2.0);
        let mut robots = vec![anchor, mover];
        let prev: Vec<Vec2> = robots.iter().map(|r| r.pos).collect();
        resolve_collisions(&mut robots, &prev, &a, &params, None);
        assert_eq!(robots[0].pos, Vec2::new(2.0, 2.0));
        assert!(robots[0].pos.distance(robots[1].pos) >= 2.0 * params.robot_radius - 1e-9);
    }

    #[test]
    fn three_way_overlap_is_deterministic() {
        let params = SimParams::default();
        let a = arena();
        let make = || {
            vec![
                robot_at(0, 2.00, 2.00),
                robot_at(1, 2.08, 2.00),
                robot_at(2, 2.04, 2.07),
            ]
        };
        let mut first = make();
        let prev: Vec<Vec2> = first.iter().map(|r| r.pos).collect();
        resolve_collisions(&mut first, &prev, &a, &params, None);
        let mut second = make();
        resolve_collisions(&mut second, &prev, &a, &params, None);
        for (x, y) in first.iter().zip(second.iter()) {
            assert_eq!(x.pos, y.pos);
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(
                    first[i].pos.distance(first[j].pos) >= 2.0 * params.robot_radius - 1e-9
                );
            }
        }
    }

    #[test]
    fn obstacle_pushout() {
        let params = SimParams::default();
        let mut a = arena();
        a.obstacles
            .push(crate::geom::Rect::from_bounds(3.0, 1.0, 4.0, 3.0));
        let mut robots = vec![robot_at(0, 2.5, 2.0)];
        robots[0].pos = Vec2::new(3.02, 2.0);
        let prev = vec![Vec2::new(2.5, 2.0)];
        resolve_collisions(&mut robots, &prev, &a, &params, None);
        assert!(
            a.obstacles[0].distance_to(robots[0].pos) >= params.robot_radius - 1e-9,
            "{:?}",
            robots[0].pos
        );
    }

    #[test]
    fn glide_is_speed_capped() {
        let params = SimParams::default();
        let a = arena();
        let mut r = robot_at(0, 2.0, 2.0);
        r.state = RobotState::HeuristicOpt1;
        apply_actuation(
            &mut r,
            &Actuation::Glide {
                delta: Vec2::new(1.0, 0.0),
            },
            &a,
            &params,
        );
        assert!((r.pos.x - 2.0 - params.step_per_tick()).abs() < 1e-12);
    }
}
