//! One tick: snapshot, evaluate every controller, commit in id order.

use super::motion::{apply_actuation, resolve_collisions};
use super::{AllocPhase, ChainLink, EventKind, Simulation};
use crate::agent::{
    recovery_repulsion, step_fsm, transition_allowed, Actuation, ChainRefs, Delivery, Hints,
    Intent, OptPass, Perception, Robot, RobotState, SeekPhase, SeekState, StepEvent, StepOutput,
    TaskPhase, Trigger,
};
use crate::comms::{allocate_tasks, FrameMode, ProtocolFrame};
use crate::geom::{wrap_angle, Vec2};
use crate::world::{
    detect_blobs, line_of_sight, nest_potential_vector, Blob, BlobSource, LedSource, SignalColor,
};
use rayon::prelude::*;

/// Proximity ring range in meters.
const PROXIMITY_RANGE: f64 = 0.10;

impl Simulation {
    /// Advance one tick: perception snapshot, controller evaluation,
    /// kinematics, collision resolution, frame delivery, event append.
    pub fn step(&mut self) {
        let n = self.robots.len();

        // --- perception snapshot (immutable) -------------------------------
        let sources = self.led_sources();
        let phase = match self.alloc.phase {
            AllocPhase::Disabled => TaskPhase::Disabled,
            AllocPhase::Searching => TaskPhase::Searching,
            AllocPhase::RoundOpen => TaskPhase::RoundOpen,
            AllocPhase::Closed => TaskPhase::Closed,
        };
        let open_tip = self.chain.open_tip();
        let claim = self.chain.claim;
        let chain_closed = self.chain.closed;

        let robots = &self.robots;
        let arena = &self.arena;
        let params = &self.params;
        let inboxes = &self.inboxes;
        let chain = &self.chain;
        let tick = self.tick;
        let sources_ref = &sources;
        let arrival_radius = self.arrival_radius;

        let eval = |robot: &Robot| -> StepOutput {
            let needs_camera = !matches!(robot.state, RobotState::Resting);
            let blobs: Vec<Blob> = if needs_camera {
                detect_blobs(
                    robot.pos,
                    robot.heading,
                    sources_ref,
                    arena,
                    params.camera_range,
                )
            } else {
                Vec::new()
            };
            let prox = if robot.is_static() || robot.state == RobotState::Resting {
                ProximityReadings {
                    solid: Vec2::ZERO,
                    solid_max: 0.0,
                    soft: Vec2::ZERO,
                    soft_max: 0.0,
                }
            } else {
                proximity_field(robots, robot, arena, params.robot_radius)
            };
            let seek_vis = robot.seek.as_ref().map(|s| {
                let target = source_position(robots, arena, s.target);
                line_of_sight(robot.pos, target, arena, params.camera_range)
            });
            let chain_refs = chain.link_index(robot.id).map(|idx| {
                let goal_ref = chain.links[idx].target;
                let nest_ref = chain
                    .links
                    .get(idx + 1)
                    .map(|l| BlobSource::Robot(l.robot_id))
                    .unwrap_or(BlobSource::Nest);
                let nest_ready = match nest_ref {
                    BlobSource::Nest => chain_closed,
                    BlobSource::Robot(nid) => robots[nid as usize]
                        .opt
                        .as_ref()
                        .map(|o| o.converged || o.pass == OptPass::Two)
                        .unwrap_or(false),
                    BlobSource::Goal => false,
                };
                let goal_ready = match goal_ref {
                    BlobSource::Goal => true,
                    BlobSource::Robot(gid) => robots[gid as usize]
                        .opt
                        .as_ref()
                        .map(|o| o.pass == OptPass::Two && o.converged)
                        .unwrap_or(false),
                    BlobSource::Nest => false,
                };
                ChainRefs {
                    nest_ref,
                    goal_ref,
                    nest_ready,
                    goal_ready,
                }
            });
            let dist_to_nest = robot.pos.distance(arena.nest.center);
            let per = Perception {
                tick,
                blobs: &blobs,
                apf: nest_potential_vector(robot.pos, arena),
                diffusion: prox.solid,
                max_proximity: prox.solid_max,
                crowd: prox.soft,
                crowd_max: prox.soft_max,
                dist_to_nest,
                at_nest: dist_to_nest <= arrival_radius,
                inbox: &inboxes[robot.id as usize],
                hints: Hints {
                    phase,
                    open_tip,
                    tip_claim_free: claim.is_none(),
                    holds_claim: claim == Some(robot.id),
                    seek_vis,
                    chain_refs,
                    chain_closed,
                },
            };
            step_fsm(robot, &per, params)
        };

        let outputs: Vec<StepOutput> = if self.params.threads > 1 {
            self.robots.par_iter().map(eval).collect()
        } else {
            self.robots.iter().map(eval).collect()
        };

        // --- commit in id order --------------------------------------------
        // Anchor intents resolve before claim intents: extending the chain
        // outranks starting a new positioning attempt the same tick.
        let mut anchor_ok: Vec<bool> = vec![true; n];
        for (i, out) in outputs.iter().enumerate() {
            let id = i as u32;
            if let Intent::Anchor { target } = out.intent {
                let claim_ok = self.chain.claim.is_none() || self.chain.claim == Some(id);
                if self.chain.closed || self.chain.open_tip() != Some(target) || !claim_ok {
                    anchor_ok[i] = false;
                } else {
                    if self.chain.claim == Some(id) {
                        self.chain.claim = None;
                    }
                    let pos = out.robot.pos;
                    self.chain.links.push(ChainLink {
                        robot_id: id,
                        pos,
                        target,
                    });
                    self.events.push(
                        self.tick,
                        Some(id),
                        EventKind::Anchored {
                            x: pos.x,
                            y: pos.y,
                            target: format!("{target:?}"),
                        },
                    );
                    let to_nest = line_of_sight(
                        pos,
                        self.arena.nest.center,
                        &self.arena,
                        self.params.camera_range,
                    );
                    if to_nest.visible {
                        self.chain.closed = true;
                        self.chain.claim = None;
                        self.chain.raw_anchor_positions = Some(
                            self.chain
                                .links
                                .iter()
                                .rev()
                                .map(|l| (l.robot_id, l.pos))
                                .collect(),
                        );
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::ChainClosed {
                                links: self.chain.links.len() as u32,
                            },
                        );
                    }
                }
            }
        }

        let mut next: Vec<Robot> = Vec::with_capacity(n);
        let mut actuations: Vec<Actuation> = Vec::with_capacity(n);
        let mut sends: Vec<(u32, ProtocolFrame)> = Vec::new();
        let mut goal_sighters: Vec<u32> = Vec::new();
        let mut completion_candidate = false;
        let mut any_transition = false;

        for (i, out) in outputs.into_iter().enumerate() {
            let id = i as u32;
            let mut accept = true;
            match out.intent {
                Intent::None => {}
                Intent::ReleaseClaim => {
                    if self.chain.claim == Some(id) {
                        self.chain.claim = None;
                    }
                }
                Intent::ClaimSeek { target } => {
                    let free = self.chain.claim.is_none() || self.chain.claim == Some(id);
                    if self.chain.closed || self.chain.open_tip() != Some(target) || !free {
                        accept = false;
                    } else {
                        self.chain.claim = Some(id);
                        self.chain.claim_tick = self.tick;
                    }
                }
                Intent::Anchor { .. } => {
                    accept = anchor_ok[i];
                }
            }

            if !accept {
                // Contention: discard the proposal, keep the previous robot.
                actuations.push(Actuation::Hold);
                next.push(self.robots[i].clone());
                continue;
            }

            let opt_pass = out.robot.opt.as_ref().map(|o| match o.pass {
                OptPass::One => 1u8,
                OptPass::Two => 2u8,
            });
            for ev in &out.events {
                match ev {
                    StepEvent::Transition { trigger, from, to } => {
                        if !transition_allowed(*from, *trigger, *to) {
                            self.fault = Some(format!(
                                "illegal transition {from} -> {to} (trigger {}) by robot {id}",
                                trigger.letter()
                            ));
                        }
                        any_transition = true;
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::StateChange {
                                from: *from,
                                to: *to,
                                trigger: trigger.letter(),
                            },
                        );
                    }
                    StepEvent::GoalSighted => goal_sighters.push(id),
                    StepEvent::OptMove { err } => {
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::OptError {
                                pass: opt_pass.unwrap_or(0),
                                err: *err,
                            },
                        );
                    }
                    StepEvent::OptConverged { pass } => {
                        let pass_num = match pass {
                            OptPass::One => 1u8,
                            OptPass::Two => 2u8,
                        };
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::OptConverged { pass: pass_num },
                        );
                        if *pass == OptPass::Two
                            && self
                                .chain
                                .links
                                .last()
                                .map(|l| l.robot_id == id)
                                .unwrap_or(false)
                        {
                            completion_candidate = true;
                        }
                    }
                    StepEvent::RoundOpened { n, discovery_ticks } => {
                        self.alloc.phase = AllocPhase::RoundOpen;
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::RoundOpened {
                                n: *n,
                                discovery_ticks: *discovery_ticks,
                            },
                        );
                        if let Some(frame) = &out.outbox {
                            self.events.push(
                                self.tick,
                                Some(id),
                                EventKind::FrameSent {
                                    to: None,
                                    hex: frame.hex(),
                                },
                            );
                        }
                    }
                    StepEvent::RoundClosed { shortfall } => {
                        self.events.push(
                            self.tick,
                            Some(id),
                            EventKind::RoundClosed {
                                shortfall: *shortfall,
                            },
                        );
                    }
                    StepEvent::AckSent { to } | StepEvent::GrantSent { to } => {
                        if let Some(frame) = &out.outbox {
                            self.events.push(
                                self.tick,
                                Some(id),
                                EventKind::FrameSent {
                                    to: Some(*to),
                                    hex: frame.hex(),
                                },
                            );
                        }
                    }
                    StepEvent::TerminationStarted => {
                        self.alloc.phase = AllocPhase::Closed;
                        if let Some(round) = &out.robot.founder_round {
                            self.alloc.result =
                                Some(allocate_tasks(&round.acks, round.n_required));
                        }
                        if let Some(frame) = &out.outbox {
                            self.events.push(
                                self.tick,
                                Some(id),
                                EventKind::FrameSent {
                                    to: None,
                                    hex: frame.hex(),
                                },
                            );
                        }
                    }
                }
            }
            if let Some(frame) = out.outbox {
                sends.push((id, frame));
            }
            actuations.push(out.actuation);
            next.push(out.robot);
        }

        // Claim hygiene: a holder that stopped seeking forfeits the claim.
        if let Some(holder) = self.chain.claim {
            if next[holder as usize].seek.is_none() {
                self.chain.claim = None;
            }
        }

        // Goal founder: lowest id among this tick's sighters.
        if self.params.task_allocation && self.alloc.founder.is_none() {
            if let Some(&first) = goal_sighters.iter().min() {
                self.alloc.founder = Some(first);
                next[first as usize].goal_founder = true;
                next[first as usize].refresh_led();
                self.events
                    .push(self.tick, Some(first), EventKind::GoalFound);
            }
        }

        // --- movement, collisions, repulsion --------------------------------
        let prev_pos: Vec<Vec2> = next.iter().map(|r| r.pos).collect();
        let mut max_disp: f64 = 0.0;
        for i in 0..n {
            // Alignment glides may never break sight of either anchor:
            // the relay depends on neighbors staying mutually visible.
            let act = match actuations[i] {
                Actuation::Glide { delta } => Actuation::Glide {
                    delta: self.los_safe_glide(&next, i, delta),
                },
                other => other,
            };
            apply_actuation(&mut next[i], &act, &self.arena, &self.params);
            max_disp = max_disp.max(prev_pos[i].distance(next[i].pos));
        }
        resolve_collisions(
            &mut next,
            &prev_pos,
            &self.arena,
            &self.params,
            self.chain.claim,
        );

        // Recovery handoff: the lowest-id eligible intruder inside the
        // repulsion band inherits the lost target and resumes positioning.
        let ta_off = !self.params.task_allocation;
        for rec_idx in 0..n {
            if next[rec_idx].state != RobotState::Recovery {
                continue;
            }
            let Some((target, last_pos)) = next[rec_idx].recovery_target else {
                continue;
            };
            if self.chain.closed
                || self.chain.open_tip() != Some(target)
                || self.chain.claim.is_some()
            {
                continue;
            }
            let rec_pos = next[rec_idx].pos;
            let intruder = (0..n).find(|&j| {
                j != rec_idx
                    && next[j].state == RobotState::Exploring
                    && next[j].seek.is_none()
                    && (next[j].path_task || ta_off)
                    && recovery_repulsion(
                        rec_pos,
                        next[j].pos,
                        self.params.repulsion_range * 1.25,
                    )
                    .is_some()
            });
            if let Some(j) = intruder {
                next[j].seek = Some(SeekState {
                    target,
                    phase: SeekPhase::Approach,
                    was_visible: false,
                    last_dist: f64::INFINITY,
                    last_known_pos: last_pos,
                    ticks: 0,
                    invisible_ticks: 0,
                });
                next[j].refresh_led();
                self.chain.claim = Some(j as u32);
                self.chain.claim_tick = self.tick;
                self.events.push(
                    self.tick,
                    Some(rec_idx as u32),
                    EventKind::RecoveryHandoff { to: j as u32 },
                );
            }
        }

        // --- frame delivery (send-tick positions) ---------------------------
        let mut new_inboxes: Vec<Vec<Delivery>> = vec![Vec::new(); n];
        for (sender, frame) in &sends {
            self.route_frame(*sender, frame, &mut new_inboxes);
        }
        self.inboxes = new_inboxes;

        // --- path completion -------------------------------------------------
        if completion_candidate && !self.path_formed {
            for link in &self.chain.links {
                let r = &mut next[link.robot_id as usize];
                if r.state == RobotState::HeuristicOpt2 {
                    self.events.push(
                        self.tick,
                        Some(r.id),
                        EventKind::StateChange {
                            from: RobotState::HeuristicOpt2,
                            to: RobotState::Resting,
                            trigger: Trigger::PathComplete.letter(),
                        },
                    );
                    r.state = RobotState::Resting;
                    r.resting_ticks_remaining = None;
                    r.refresh_led();
                }
            }
            self.events.push(
                self.tick,
                None,
                EventKind::PathFormed {
                    links: self.chain.links.len() as u32,
                },
            );
            self.path_formed = true;
            any_transition = true;
        }

        self.robots = next;
        if any_transition || max_disp > 1e-3 {
            self.last_activity_tick = self.tick;
        }
        self.tick += 1;

        #[cfg(debug_assertions)]
        self.check_invariants();
    }

    /// Halve a glide step until the destination is clear of obstacles and
    /// keeps line of sight to both chain anchors. Returns a zero delta when
    /// no safe step exists.
    fn los_safe_glide(&self, robots: &[Robot], i: usize, delta: Vec2) -> Vec2 {
        let Some(idx) = self.chain.link_index(i as u32) else {
            return delta;
        };
        let goal_ref = source_position(robots, &self.arena, self.chain.links[idx].target);
        let nest_ref = self
            .chain
            .links
            .get(idx + 1)
            .map(|l| robots[l.robot_id as usize].pos)
            .unwrap_or(self.arena.nest.center);
        let r = self.params.robot_radius;
        let mut step = delta;
        for _ in 0..8 {
            let candidate = robots[i].pos + step;
            let in_bounds = candidate.x >= r
                && candidate.y >= r
                && candidate.x <= self.arena.width - r
                && candidate.y <= self.arena.height - r;
            let clear = in_bounds
                && !self
                    .arena
                    .obstacles
                    .iter()
                    .any(|ob| ob.distance_to(candidate) < r)
                && line_of_sight(candidate, goal_ref, &self.arena, self.params.camera_range)
                    .visible
                && line_of_sight(candidate, nest_ref, &self.arena, self.params.camera_range)
                    .visible;
            if clear {
                return step;
            }
            step = step.scale(0.5);
            if step.norm() < 1e-4 {
                break;
            }
        }
        Vec2::ZERO
    }

    /// Lit LED sources plus the two landmarks.
    fn led_sources(&self) -> Vec<LedSource> {
        let mut sources: Vec<LedSource> = self
            .robots
            .iter()
            .filter(|r| r.led != SignalColor::Black)
            .map(|r| LedSource {
                source: BlobSource::Robot(r.id),
                pos: r.pos,
                color: r.led,
            })
            .collect();
        sources.push(LedSource {
            source: BlobSource::Nest,
            pos: self.arena.nest.center,
            color: SignalColor::NestBlue,
        });
        sources.push(LedSource {
            source: BlobSource::Goal,
            pos: self.arena.goal.center,
            color: SignalColor::GoalPink,
        });
        sources
    }

    /// Route one frame from `sender` to everyone in range with line of
    /// sight at the send tick. Unicast narrows delivery to its target.
    fn route_frame(&self, sender: u32, frame: &ProtocolFrame, inboxes: &mut [Vec<Delivery>]) {
        let from = self.robots[sender as usize].pos;
        let deliver_to = |j: u32| -> Option<Delivery> {
            if j == sender {
                return None;
            }
            let to_robot = &self.robots[j as usize];
            let vis = line_of_sight(from, to_robot.pos, &self.arena, self.params.rab_range);
            if !vis.visible {
                return None;
            }
            let d = to_robot.pos - from;
            Some(Delivery {
                frame: *frame,
                sender,
                range: vis.range,
                bearing: wrap_angle((-d).angle() - to_robot.heading),
            })
        };
        match frame.mode {
            FrameMode::Unicast(target) => {
                if (target as usize) < self.robots.len() {
                    if let Some(d) = deliver_to(target) {
                        inboxes[target as usize].push(d);
                    }
                }
            }
            FrameMode::Broadcast => {
                for j in 0..self.robots.len() as u32 {
                    if let Some(d) = deliver_to(j) {
                        inboxes[j as usize].push(d);
                    }
                }
            }
        }
    }

    #[cfg(debug_assertions)]
    fn check_invariants(&self) {
        for r in &self.robots {
            debug_assert!(
                self.arena.contains(r.pos),
                "robot {} out of bounds at {:?}",
                r.id,
                r.pos
            );
        }
    }
}

/// Resolve a blob source to its true current position.
fn source_position(robots: &[Robot], arena: &crate::world::ArenaSpec, src: BlobSource) -> Vec2 {
    match src {
        BlobSource::Robot(id) => robots[id as usize].pos,
        BlobSource::Nest => arena.nest.center,
        BlobSource::Goal => arena.goal.center,
    }
}

/// Synthesize the proximity ring, split into solid contacts (walls,
/// obstacles, anchored robots -- things worth sliding along) and soft
/// contacts (movable robots, which yield and can be pushed through).
/// Each half is a world-frame repulsive resultant plus its strongest
/// single reading.
fn proximity_field(
    robots: &[Robot],
    robot: &Robot,
    arena: &crate::world::ArenaSpec,
    radius: f64,
) -> ProximityReadings {
    let p = robot.pos;
    let mut solid: Vec<(f64, f64)> = Vec::new();
    let mut soft: Vec<(f64, f64)> = Vec::new();
    let reading = |gap: f64| (1.0 - gap / PROXIMITY_RANGE).clamp(0.0, 1.0);

    let mut push_solid = |bearing: f64, gap: f64| {
        let value = reading(gap);
        if value > 0.0 {
            solid.push((bearing, value));
        }
    };

    // arena walls
    push_solid(std::f64::consts::PI, p.x - radius); // wall at x = 0
    push_solid(0.0, arena.width - p.x - radius);
    push_solid(-std::f64::consts::FRAC_PI_2, p.y - radius); // wall at y = 0
    push_solid(std::f64::consts::FRAC_PI_2, arena.height - p.y - radius);

    for ob in &arena.obstacles {
        let cp = ob.closest_point(p);
        let d = p.distance(cp);
        if d < radius + PROXIMITY_RANGE && d > 1e-12 {
            push_solid((cp - p).angle(), d - radius);
        }
    }

    for other in robots {
        if other.id == robot.id {
            continue;
        }
        let d = p.distance(other.pos);
        if d < 2.0 * radius + PROXIMITY_RANGE && d > 1e-12 {
            let bearing = (other.pos - p).angle();
            let value = reading(d - 2.0 * radius);
            if value <= 0.0 {
                continue;
            }
            if other.is_static() {
                solid.push((bearing, value));
            } else {
                soft.push((bearing, value));
            }
        }
    }

    let max_of = |v: &[(f64, f64)]| v.iter().map(|&(_, x)| x).fold(0.0f64, f64::max);
    ProximityReadings {
        solid: crate::world::diffusion_vector(&solid),
        solid_max: max_of(&solid),
        soft: crate::world::diffusion_vector(&soft),
        soft_max: max_of(&soft),
    }
}

struct ProximityReadings {
    solid: Vec2,
    solid_max: f64,
    soft: Vec2,
    soft_max: f64,
}
