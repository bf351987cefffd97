//! The per-tick controller: pure function of (robot, perception, params,
//! rng draw). The engine snapshots perception, runs `step_fsm` for every
//! robot and commits the proposals in id order.

use super::{
    alignment_error, recovery_check, wheel_command, AlignmentGeometry, FounderRound, Robot,
    RobotState, Trigger, WheelParams,
};
use crate::comms::{decode_frame, encode_frame, FrameFlags, FrameMode, ProtocolFrame};
use crate::geom::{wrap_angle, Vec2};
use crate::params::SimParams;
use crate::world::{Blob, BlobSource, SignalColor, VisibilityResult};
use rand::Rng;

/// Gain applied to the diffusion vector when proximity exceeds delta.
const DIFFUSION_GAIN: f64 = 2.0;
/// Gain for steering away from visible recovery beacons.
const RECOVERY_AVOID_GAIN: f64 = 1.5;
/// Optimization motion below this is "converged in place".
const OPT_MIN_STEP: f64 = 0.002;
/// Ticks an optimization may sit with no error progress before settling.
const OPT_STALL_TICKS: u32 = 150;
/// Ticks an approach may go without ever sighting its target.
const APPROACH_PATIENCE: u32 = 400;
/// Termination broadcast repetitions.
const TERMINATION_TICKS: u32 = 20;
/// Ack resend interval while waiting for a grant.
const ACK_RESEND_TICKS: u32 = 20;

/// A received frame plus range-and-bearing metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub frame: ProtocolFrame,
    pub sender: u32,
    pub range: f64,
    pub bearing: f64,
}

/// Where the run stands in the task-allocation workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPhase {
    /// Task allocation disabled: path formation from the start.
    Disabled,
    /// Exploring for the goal; no round opened yet.
    Searching,
    /// The founder is collecting acknowledgments at the nest.
    RoundOpen,
    /// Termination broadcast; assigned robots build the chain.
    Closed,
}

/// Positioning sub-phases: close in on the target first, then walk out
/// nest-ward to the anchoring band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeekPhase {
    Approach,
    Outbound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeekState {
    pub target: BlobSource,
    pub phase: SeekPhase,
    pub was_visible: bool,
    pub last_dist: f64,
    pub last_known_pos: Vec2,
    pub ticks: u32,
    pub invisible_ticks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptPass {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub pass: OptPass,
    pub nest_ref: BlobSource,
    pub goal_ref: BlobSource,
    pub converged: bool,
    pub last_err: Option<f64>,
    pub stall_ticks: u32,
}

/// Chain neighbors an anchored subgoal aligns against, with the relay
/// readiness of each side: a neighbor is ready only once its own alignment
/// pass has converged, so anchors stay put while being aligned against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRefs {
    pub nest_ref: BlobSource,
    pub goal_ref: BlobSource,
    /// Nest-side reference has converged (or is the nest of a closed chain).
    pub nest_ready: bool,
    /// Goal-side reference finished the second pass (or is the goal).
    pub goal_ready: bool,
}

/// Engine-resolved context handed to the controller next to raw perception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hints {
    pub phase: TaskPhase,
    /// The extendable chain end: goal landmark before any anchor, last
    /// anchor afterwards, `None` once the chain has closed.
    pub open_tip: Option<BlobSource>,
    pub tip_claim_free: bool,
    pub holds_claim: bool,
    /// Ground-truth visibility of this robot's tracked seek target.
    pub seek_vis: Option<VisibilityResult>,
    pub chain_refs: Option<ChainRefs>,
    pub chain_closed: bool,
}

impl Default for Hints {
    fn default() -> Self {
        Hints {
            phase: TaskPhase::Disabled,
            open_tip: Some(BlobSource::Goal),
            tip_claim_free: true,
            holds_claim: false,
            seek_vis: None,
            chain_refs: None,
            chain_closed: false,
        }
    }
}

/// Everything a robot senses in one tick.
#[derive(Debug, Clone)]
pub struct Perception<'a> {
    pub tick: u64,
    pub blobs: &'a [Blob],
    /// Unit vector toward the nest, world frame.
    pub apf: Vec2,
    /// Repulsive resultant of solid contacts (walls, obstacles, anchored
    /// robots), world frame.
    pub diffusion: Vec2,
    pub max_proximity: f64,
    /// Repulsive resultant of movable-robot contacts.
    pub crowd: Vec2,
    pub crowd_max: f64,
    pub dist_to_nest: f64,
    pub at_nest: bool,
    pub inbox: &'a [Delivery],
    pub hints: Hints,
}

impl<'a> Perception<'a> {
    fn blob(&self, source: BlobSource) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.source == source)
    }
}

/// Motor output of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Actuation {
    Wheels { left: f64, right: f64 },
    /// Small repositioning motion used while optimizing; capped by the
    /// engine at wheel speed.
    Glide { delta: Vec2 },
    Hold,
}

/// Arbitration requests the engine resolves in id order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intent {
    None,
    /// Start positioning against the open tip.
    ClaimSeek { target: BlobSource },
    ReleaseClaim,
    /// Anchor at the current position, extending the chain off `target`.
    Anchor { target: BlobSource },
}

/// Things that happened during the step, for the event log and registry.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Transition {
        trigger: Trigger,
        from: RobotState,
        to: RobotState,
    },
    GoalSighted,
    OptMove { err: f64 },
    OptConverged { pass: OptPass },
    RoundOpened { n: u32, discovery_ticks: u32 },
    RoundClosed { shortfall: u32 },
    AckSent { to: u32 },
    GrantSent { to: u32 },
    TerminationStarted,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub robot: Robot,
    pub actuation: Actuation,
    pub outbox: Option<ProtocolFrame>,
    pub intent: Intent,
    pub events: Vec<StepEvent>,
}

struct Ctx<'a, 'b> {
    per: &'a Perception<'b>,
    params: &'a SimParams,
    wheels: WheelParams,
    events: Vec<StepEvent>,
    actuation: Actuation,
    outbox: Option<ProtocolFrame>,
    intent: Intent,
}

impl<'a, 'b> Ctx<'a, 'b> {
    fn transition(&mut self, robot: &mut Robot, trigger: Trigger, to: RobotState) {
        self.events.push(StepEvent::Transition {
            trigger,
            from: robot.state,
            to,
        });
        robot.state = to;
    }

    /// Steer toward a world-frame heading at full speed.
    fn drive_toward(&mut self, robot: &Robot, target_heading: f64) {
        let err = wrap_angle(target_heading - robot.heading);
        let (left, right) = wheel_command(err, &self.wheels);
        self.actuation = Actuation::Wheels { left, right };
    }
}

/// Compose a steering heading: a base direction, proximity diffusion gated
/// by delta, an extra avoidance term and the uniform perturbation.
///
/// An obstacle dead ahead would cancel the base drive outright, so that
/// case turns into a slide along the obstacle face. `slide_sign` keeps the
/// chosen side sticky until contact clears, so lumpy surfaces (robot
/// clusters, wall seams) are circumnavigated instead of dithered against.
#[allow(clippy::too_many_arguments)]
pub fn explore_heading(
    base: Vec2,
    diffusion: Vec2,
    max_proximity: f64,
    delta: f64,
    avoid: Vec2,
    noise_rad: f64,
    current_heading: f64,
    slide_sign: &mut Option<f64>,
) -> f64 {
    let _ = current_heading;
    let mut dir = base.normalized();
    if max_proximity > delta {
        let repulse = diffusion.normalized();
        if repulse.dot(dir) < -0.3 || slide_sign.is_some() {
            // One shared slide sense (counterclockwise around the
            // obstacle): robots meeting a face flow the same way instead
            // of grinding head-on.
            let tangent = Vec2::new(-repulse.y, repulse.x);
            let sign = *slide_sign.get_or_insert(1.0);
            dir = tangent.scale(sign) + repulse.scale(0.3);
        } else {
            dir += diffusion.scale(DIFFUSION_GAIN);
        }
    } else {
        *slide_sign = None;
    }
    dir += avoid;
    wrap_angle(dir.angle() + noise_rad)
}

/// Traffic avoidance for movable neighbors: steer around, never wall-slide.
/// Capped so a dense crowd cannot drown the primary drive.
fn crowd_term(per: &Perception, delta: f64) -> Vec2 {
    if per.crowd_max > delta {
        let c = per.crowd.scale(1.2);
        let n = c.norm();
        if n > 0.8 {
            c.scale(0.8 / n)
        } else {
            c
        }
    } else {
        Vec2::ZERO
    }
}

/// One controller step. Pure in (robot, perception, params) and the
/// robot's own rng stream.
pub fn step_fsm(robot: &Robot, per: &Perception, params: &SimParams) -> StepOutput {
    let mut r = robot.clone();
    let mut ctx = Ctx {
        per,
        params,
        wheels: WheelParams::from_controller(&params.controller),
        events: Vec::new(),
        actuation: Actuation::Hold,
        outbox: None,
        intent: Intent::None,
    };

    match r.state {
        RobotState::Resting => resting_step(&mut r, &mut ctx),
        RobotState::Exploring => {
            if r.seek.is_some() {
                seeking_step(&mut r, &mut ctx);
            } else {
                exploring_step(&mut r, &mut ctx);
            }
        }
        RobotState::ReturnToNest => return_step(&mut r, &mut ctx),
        RobotState::DecisionMaking => decision_step(&mut r, &mut ctx),
        RobotState::Subgoal => subgoal_step(&mut r, &mut ctx),
        RobotState::Recovery => recovery_step(&mut r, &mut ctx),
        RobotState::HeuristicOpt1 | RobotState::HeuristicOpt2 => optimization_step(&mut r, &mut ctx),
    }

    r.refresh_led();
    StepOutput {
        robot: r,
        actuation: ctx.actuation,
        outbox: ctx.outbox,
        intent: ctx.intent,
        events: ctx.events,
    }
}

fn resting_step(r: &mut Robot, ctx: &mut Ctx) {
    match r.resting_ticks_remaining {
        Some(0) => {
            ctx.transition(r, Trigger::RestingOver, RobotState::Exploring);
            start_excursion(r, ctx);
        }
        Some(n) => r.resting_ticks_remaining = Some(n - 1),
        None => {} // resting task: hold until the run ends
    }
}

fn start_excursion(r: &mut Robot, _ctx: &mut Ctx) {
    r.exploring_ticks = 0;
    r.resting_ticks_remaining = None;
    r.seek = None;
    r.explore_bias = 0.0;
    if let Some(granted) = r.granted_budget.take() {
        r.exploration_budget = granted;
    }
    r.heading = wrap_angle(r.rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI));
}

fn exploring_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    let hints = per.hints;
    let ta_on = hints.phase != TaskPhase::Disabled;
    let may_form_path = r.path_task || !ta_on;

    // Goal sighted while allocation is pending: become/join the decision wave.
    if ta_on && matches!(hints.phase, TaskPhase::Searching | TaskPhase::RoundOpen) {
        if per.blob(BlobSource::Goal).is_some() {
            r.discovery_ticks = Some(r.exploring_ticks);
            ctx.events.push(StepEvent::GoalSighted);
            ctx.transition(r, Trigger::GoalDiscovered, RobotState::DecisionMaking);
            ctx.drive_toward(r, per.apf.angle());
            return;
        }
        // Met a robot already in the decision wave.
        if sees_robot_color(per, &[SignalColor::DashedMagenta, SignalColor::IntenseMagenta]) {
            ctx.transition(r, Trigger::MetDecisionRobot, RobotState::DecisionMaking);
            ctx.drive_toward(r, per.apf.angle());
            return;
        }
    }

    // After allocation closed, unassigned robots that meet the busy part of
    // the swarm head home to rest.
    if ta_on && hints.phase == TaskPhase::Closed && !r.path_task {
        if sees_robot_color(
            per,
            &[
                SignalColor::DashedMagenta,
                SignalColor::IntenseMagenta,
                SignalColor::Blue,
                SignalColor::RedYellow,
            ],
        ) {
            ctx.transition(r, Trigger::MetDecisionRobot, RobotState::DecisionMaking);
            ctx.drive_toward(r, per.apf.angle());
            return;
        }
    }

    if r.seek_cooldown > 0 {
        r.seek_cooldown -= 1;
    }
    // Chain extension: spot the open tip.
    let tip_blob = if may_form_path && hints.tip_claim_free && !hints.chain_closed && r.seek_cooldown == 0
    {
        hints.open_tip.and_then(|tip| per.blob(tip).copied())
    } else {
        None
    };
    if let Some(blob) = tip_blob {
        if blob.range <= ctx.params.detect_range {
            // Enter positioning. The engine arbitrates simultaneous claims.
            let target_pos = blob_world_pos(r, &blob);
            r.seek = Some(SeekState {
                target: blob.source,
                phase: SeekPhase::Outbound,
                was_visible: true,
                last_dist: blob.range,
                last_known_pos: target_pos,
                ticks: 0,
                invisible_ticks: 0,
            });
            ctx.intent = Intent::ClaimSeek {
                target: blob.source,
            };
            ctx.drive_toward(r, per.apf.angle());
            return;
        }
    }

    // Budget exhausted: head home and widen the next search.
    if r.exploring_ticks >= r.exploration_budget {
        ctx.transition(r, Trigger::ExplorationFailed, RobotState::ReturnToNest);
        r.nest_loiter_ticks = 0;
        ctx.drive_toward(r, per.apf.angle());
        return;
    }
    r.exploring_ticks += 1;

    // Movement: against the potential field with an accumulating random
    // perturbation; a visible open tip overrides, and any visible chain
    // beacon guides toward the nest-side end of the chain.
    let (lo, hi) = ctx.params.controller.go_straight_angle_range_deg;
    r.explore_bias += r.rng.gen_range(lo.to_radians()..=hi.to_radians());
    let beacon_guide = if may_form_path && !hints.chain_closed && tip_blob.is_none() {
        per.blobs
            .iter()
            .find(|b| {
                matches!(b.source, BlobSource::Robot(_)) && b.color == SignalColor::Red
            })
            .map(|b| blob_world_pos(r, b) + per.apf.scale(0.6) - r.pos)
    } else {
        None
    };
    let (base, noise) = if let Some(blob) = tip_blob {
        (blob_world_pos(r, &blob) - r.pos, 0.0)
    } else if let Some(dir) = beacon_guide {
        (dir, 0.0)
    } else {
        (-per.apf, r.explore_bias)
    };
    let avoid = recovery_avoidance(r, per) + crowd_term(per, ctx.params.controller.delta);
    let heading = explore_heading(
        base,
        per.diffusion,
        per.max_proximity,
        ctx.params.controller.delta,
        avoid,
        noise,
        r.heading,
        &mut r.slide_sign,
    );
    ctx.drive_toward(r, heading);
}

fn seeking_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    let params = ctx.params;
    // Chain builders share one wall-following sense, so successive anchors
    // march around an obstacle instead of random-walking along its face.
    if per.max_proximity > params.controller.delta {
        r.slide_sign = Some(1.0);
    }
    let mut seek = r.seek.clone().expect("seeking_step without seek state");
    seek.ticks += 1;

    if seek.ticks > params.claim_timeout_ticks {
        abort_seek(r, ctx);
        return;
    }

    let blob = per.blob(seek.target).copied();
    match blob {
        Some(b) => {
            let dist = b.range;
            let target_pos = blob_world_pos(r, &b);
            seek.was_visible = true;
            seek.invisible_ticks = 0;
            seek.last_known_pos = target_pos;

            let band_lo = params.anchor_range - params.anchor_tolerance;
            let band_hi = params.anchor_range + params.anchor_tolerance;
            match seek.phase {
                SeekPhase::Outbound => {
                    // The anchor must not extend the chain straight away
                    // from the nest; sideways and climbing placements that
                    // skirt an obstacle stay legal.
                    let nest_pos = r.pos + per.apf.scale(per.dist_to_nest);
                    let target_nest_dist = target_pos.distance(nest_pos);
                    let mut forward = per.dist_to_nest < target_nest_dist + 0.5;
                    // Hugging a wall, anchors may only extend along the
                    // shared slide sense; otherwise the chain ping-pongs
                    // up and down the face.
                    if per.max_proximity > params.controller.delta {
                        let rep = per.diffusion.normalized();
                        let tangent = Vec2::new(-rep.y, rep.x);
                        forward = forward && (r.pos - target_pos).dot(tangent) >= 0.0;
                    }
                    if dist >= band_lo && dist <= band_hi && forward {
                        // Anchor here: become a static subgoal.
                        ctx.transition(r, Trigger::FoundTarget, RobotState::Subgoal);
                        r.anchored_pos = Some(r.pos);
                        r.seek = None;
                        ctx.intent = Intent::Anchor {
                            target: seek.target,
                        };
                        ctx.actuation = Actuation::Hold;
                        return;
                    }
                    if dist > band_hi {
                        seek.phase = SeekPhase::Approach; // shoved past the band
                        ctx.drive_toward(r, (target_pos - r.pos).angle());
                    } else {
                        // walk out along the potential field toward the nest
                        let heading = seek_heading(r, ctx, per.apf);
                        ctx.drive_toward(r, heading);
                    }
                }
                SeekPhase::Approach => {
                    if dist < band_lo - params.anchor_tolerance {
                        seek.phase = SeekPhase::Outbound;
                        let heading = seek_heading(r, ctx, per.apf);
                        ctx.drive_toward(r, heading);
                    } else {
                        let heading = seek_heading(r, ctx, target_pos - r.pos);
                        ctx.drive_toward(r, heading);
                    }
                }
            }
            seek.last_dist = dist;
            r.seek = Some(seek);
        }
        None => {
            seek.invisible_ticks += 1;
            let vis = per.hints.seek_vis.unwrap_or(VisibilityResult {
                visible: false,
                range: f64::INFINITY,
                occluded_by_obstacle: false,
                out_of_range: true,
            });
            if recovery_check(seek.was_visible, vis.visible, vis.range, params.camera_range) {
                // Occlusion inferred: freeze as a recovery beacon.
                ctx.transition(r, Trigger::LostVisibility, RobotState::Recovery);
                r.recovery_target = Some((seek.target, seek.last_known_pos));
                r.anchored_pos = Some(r.pos);
                r.seek = None;
                ctx.intent = Intent::ReleaseClaim;
                ctx.actuation = Actuation::Hold;
                return;
            }
            if seek.was_visible || seek.invisible_ticks > APPROACH_PATIENCE {
                // Drifted out of range, or an inherited target never showed.
                abort_seek(r, ctx);
                return;
            }
            // Inherited target not yet sighted: head for its last known spot.
            let heading = seek_heading(r, ctx, seek.last_known_pos - r.pos);
            ctx.drive_toward(r, heading);
            r.seek = Some(seek);
        }
    }
}

/// Walking heading without beacon avoidance: returners and decision
/// traffic track no target, so blind-spot detours would only jam lanes.
fn walk_heading(r: &mut Robot, ctx: &Ctx, base: Vec2) -> f64 {
    let per = ctx.per;
    let avoid = crowd_term(per, ctx.params.controller.delta);
    explore_heading(
        base,
        per.diffusion,
        per.max_proximity,
        ctx.params.controller.delta,
        avoid,
        0.0,
        r.heading,
        &mut r.slide_sign,
    )
}

/// Blend a base direction with obstacle diffusion and beacon avoidance.
fn seek_heading(r: &mut Robot, ctx: &Ctx, base: Vec2) -> f64 {
    let per = ctx.per;
    let avoid = recovery_avoidance(r, per) + crowd_term(per, ctx.params.controller.delta).scale(0.5);
    explore_heading(
        base,
        per.diffusion,
        per.max_proximity,
        ctx.params.controller.delta,
        avoid,
        0.0,
        r.heading,
        &mut r.slide_sign,
    )
}

fn abort_seek(r: &mut Robot, ctx: &mut Ctx) {
    r.seek = None;
    r.seek_cooldown = 400;
    ctx.intent = Intent::ReleaseClaim;
    ctx.drive_toward(r, (-ctx.per.apf).angle());
}

/// Steer away from visible recovery beacons so blind spots are skirted;
/// inside the repulsion band the push is dominant. The robot holding the
/// positioning claim is exempt: it may enter the marked region, and an
/// actual sight loss is what the recovery state handles.
fn recovery_avoidance(r: &Robot, per: &Perception) -> Vec2 {
    if per.hints.holds_claim {
        return Vec2::ZERO;
    }
    let mut avoid = Vec2::ZERO;
    for blob in per.blobs {
        if blob.color == SignalColor::Magenta {
            if let BlobSource::Robot(_) = blob.source {
                let away = -Vec2::from_angle(r.heading + blob.bearing);
                let w = if blob.range <= 0.2 {
                    3.0
                } else {
                    (1.0 - blob.range).max(0.0) * RECOVERY_AVOID_GAIN
                };
                avoid += away.scale(w);
            }
        }
    }
    avoid
}

fn return_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    if per.at_nest {
        r.nest_loiter_ticks += 1;
        if r.nest_loiter_ticks >= ctx.params.nest_loiter_ticks() {
            r.nest_loiter_ticks = 0;
            // Recharge; a failed excursion widens the next one.
            if r.granted_budget.is_none() {
                let grown = (r.exploration_budget as f64 * ctx.params.budget_growth).ceil();
                r.exploration_budget = grown as u32;
            }
            ctx.transition(r, Trigger::ReachedNest, RobotState::Exploring);
            start_excursion(r, ctx);
            return;
        }
        wander_slowly(r, ctx);
        return;
    }
    let (lo, hi) = ctx.params.controller.go_straight_angle_range_deg;
    let noise = r.rng.gen_range(lo.to_radians()..=hi.to_radians());
    let avoid = crowd_term(per, ctx.params.controller.delta);
    let heading = explore_heading(
        per.apf,
        per.diffusion,
        per.max_proximity,
        ctx.params.controller.delta,
        avoid,
        noise,
        r.heading,
        &mut r.slide_sign,
    );
    ctx.drive_toward(r, heading);
}

fn wander_slowly(r: &mut Robot, ctx: &mut Ctx) {
    let turn = r.rng.gen_range(-0.3..=0.3);
    let heading = wrap_angle(r.heading + turn);
    let err = wrap_angle(heading - r.heading);
    let (l, rw) = wheel_command(err, &ctx.wheels);
    ctx.actuation = Actuation::Wheels {
        left: l * 0.3,
        right: rw * 0.3,
    };
}

fn decision_step(r: &mut Robot, ctx: &mut Ctx) {
    if r.goal_founder {
        founder_step(r, ctx);
        return;
    }
    let per = ctx.per;

    // Assigned to rest: burrow into the nest area first so the pack stays
    // out of the working corridor, then freeze.
    if let Some(t) = r.settle_ticks {
        if t == 0 || per.dist_to_nest < 0.3 {
            r.settle_ticks = None;
            ctx.transition(r, Trigger::AssignedRest, RobotState::Resting);
            r.resting_ticks_remaining = None;
            ctx.actuation = Actuation::Hold;
        } else {
            r.settle_ticks = Some(t - 1);
            ctx.drive_toward(r, per.apf.angle());
        }
        return;
    }

    // React to allocation traffic regardless of position.
    let mut request_seen: Option<(u32, u32)> = None; // (founder id, discovery ticks)
    for d in per.inbox {
        if let Ok((t, id, flags)) = decode_frame(&d.frame) {
            if flags.request {
                match d.frame.mode {
                    FrameMode::Broadcast => request_seen = Some((id, t)),
                    FrameMode::Unicast(_) => {
                        // Task grant: join path formation with a budget sized
                        // from the founder's discovery time.
                        r.path_task = true;
                        let budget =
                            ((t as f64) * ctx.params.budget_growth).ceil().max(1.0) as u32;
                        r.granted_budget = Some(budget);
                        ctx.transition(r, Trigger::ReturnToAllocate, RobotState::ReturnToNest);
                        r.nest_loiter_ticks = 0;
                        return;
                    }
                }
            }
            if flags.terminate && !r.path_task {
                r.settle_ticks = Some(ctx.params.nest_loiter_ticks());
                ctx.drive_toward(r, per.apf.angle());
                return;
            }
        }
    }

    if let Some((founder_id, _t)) = request_seen {
        if r.ack_cooldown == 0 {
            if let Ok(frame) = encode_frame(
                r.exploring_ticks.min(0xFFFF),
                r.id,
                FrameFlags {
                    ack: true,
                    ..FrameFlags::none()
                },
            ) {
                ctx.outbox = Some(ProtocolFrame {
                    mode: FrameMode::Unicast(founder_id),
                    ..frame
                });
                ctx.events.push(StepEvent::AckSent { to: founder_id });
                r.acked = true;
                r.ack_cooldown = ACK_RESEND_TICKS;
            }
        }
    }
    if r.ack_cooldown > 0 {
        r.ack_cooldown -= 1;
    }

    if per.at_nest {
        // Late arrival after the round closed: rest.
        if per.hints.phase == TaskPhase::Closed {
            r.settle_ticks = Some(ctx.params.nest_loiter_ticks());
            ctx.drive_toward(r, per.apf.angle());
            return;
        }
        // Stay near the founder if visible; otherwise compact inward so
        // later arrivals can get within reach of the nest too.
        if let Some(blob) = per
            .blobs
            .iter()
            .find(|b| b.color == SignalColor::DashedMagenta)
        {
            if blob.range > 0.7 {
                let heading = (blob_world_pos(r, blob) - r.pos).angle();
                ctx.drive_toward(r, heading);
                return;
            }
        }
        if !r.acked && per.dist_to_nest > 0.5 {
            let heading = walk_heading(r, ctx, per.apf);
            let err = wrap_angle(heading - r.heading);
            let (l, rw) = wheel_command(err, &ctx.wheels);
            ctx.actuation = Actuation::Wheels {
                left: l * 0.5,
                right: rw * 0.5,
            };
            return;
        }
        wander_slowly(r, ctx);
        return;
    }
    let heading = walk_heading(r, ctx, per.apf);
    ctx.drive_toward(r, heading);
}

fn founder_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    if !per.at_nest && r.founder_round.is_none() {
        let heading = walk_heading(r, ctx, per.apf);
        ctx.drive_toward(r, heading);
        return;
    }

    if r.founder_round.is_none() {
        let discovery = r.discovery_ticks.unwrap_or(r.exploring_ticks).min(0xFFFF);
        let t_seconds = discovery as f64 * ctx.params.tick_seconds;
        let n = crate::comms::required_robot_count(
            ctx.params.speed_mps(),
            t_seconds,
            ctx.params.camera_range,
            ctx.params.allocation_delta,
        )
        .unwrap_or(0);
        r.founder_round = Some(FounderRound {
            n_required: n,
            discovery_ticks: discovery,
            acks: Vec::new(),
            opened_tick: per.tick,
            last_ack_tick: per.tick,
            closed: false,
            pending_grants: Vec::new(),
            termination_left: TERMINATION_TICKS,
            done: false,
        });
        ctx.events.push(StepEvent::RoundOpened {
            n,
            discovery_ticks: discovery,
        });
    }

    let mut round = r.founder_round.clone().expect("round just ensured");
    if round.done {
        // Shouldn't linger here, but keep it safe.
        ctx.actuation = Actuation::Hold;
        return;
    }

    if !round.closed {
        // Collect acknowledgments; the inbox arrives in sender id order,
        // which is the documented tie-break for simultaneous acks.
        for d in per.inbox {
            if let Ok((_t, id, flags)) = decode_frame(&d.frame) {
                if flags.ack && !round.acks.contains(&id) {
                    round.acks.push(id);
                    round.last_ack_tick = per.tick;
                }
            }
        }
        let stalled = per.tick.saturating_sub(round.last_ack_tick)
            > ctx.params.allocation_stall_ticks as u64;
        if round.acks.len() >= round.n_required as usize || stalled {
            round.closed = true;
            let cut = (round.n_required as usize).min(round.acks.len());
            round.pending_grants = round.acks[..cut].to_vec();
            let shortfall = round.n_required - cut as u32;
            ctx.events.push(StepEvent::RoundClosed { shortfall });
        } else {
            // Keep broadcasting the task request.
            if let Ok(frame) = encode_frame(
                round.discovery_ticks,
                r.id,
                FrameFlags {
                    request: true,
                    ..FrameFlags::none()
                },
            ) {
                ctx.outbox = Some(frame);
            }
            wander_slowly(r, ctx);
            r.founder_round = Some(round);
            return;
        }
    }

    // Round closed: hand out grants one frame per tick, then terminate.
    if let Some(next) = round.pending_grants.first().copied() {
        round.pending_grants.remove(0);
        if let Ok(frame) = encode_frame(
            round.discovery_ticks,
            r.id,
            FrameFlags {
                request: true,
                ..FrameFlags::none()
            },
        ) {
            ctx.outbox = Some(ProtocolFrame {
                mode: FrameMode::Unicast(next),
                ..frame
            });
            ctx.events.push(StepEvent::GrantSent { to: next });
        }
        ctx.actuation = Actuation::Hold;
        r.founder_round = Some(round);
        return;
    }
    if round.termination_left > 0 {
        if round.termination_left == TERMINATION_TICKS {
            ctx.events.push(StepEvent::TerminationStarted);
        }
        round.termination_left -= 1;
        if let Ok(frame) = encode_frame(
            round.discovery_ticks,
            r.id,
            FrameFlags {
                terminate: true,
                ..FrameFlags::none()
            },
        ) {
            ctx.outbox = Some(frame);
        }
        ctx.actuation = Actuation::Hold;
        r.founder_round = Some(round);
        return;
    }

    // All signaling done: the founder joins path formation itself.
    round.done = true;
    r.founder_round = Some(round);
    r.path_task = true;
    let discovery = r.discovery_ticks.unwrap_or(0);
    r.granted_budget = Some(((discovery as f64) * ctx.params.budget_growth).ceil().max(1.0) as u32);
    ctx.transition(r, Trigger::ReturnToAllocate, RobotState::ReturnToNest);
    r.nest_loiter_ticks = 0;
}

fn subgoal_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    ctx.actuation = Actuation::Hold;
    let Some(refs) = per.hints.chain_refs else {
        return;
    };

    // Start the first alignment pass once the nest-side reference lights up:
    // the nest landmark itself for the chain end, a converged sub-nest
    // otherwise.
    let nest_side_ready = match refs.nest_ref {
        BlobSource::Nest => per.hints.chain_closed && per.blob(BlobSource::Nest).is_some(),
        BlobSource::Robot(_) => refs.nest_ready && per.blob(refs.nest_ref).is_some(),
        BlobSource::Goal => false,
    };
    if nest_side_ready {
        ctx.transition(r, Trigger::StartOpt1, RobotState::HeuristicOpt1);
        r.opt = Some(OptState {
            pass: OptPass::One,
            nest_ref: refs.nest_ref,
            goal_ref: refs.goal_ref,
            converged: false,
            last_err: None,
            stall_ticks: 0,
        });
    }
}

fn recovery_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    ctx.actuation = Actuation::Hold;
    let Some((target, _last_pos)) = r.recovery_target else {
        return;
    };
    // Re-acquisition: if the lost target is visible again and the chain
    // still ends there, anchor in place.
    if per.hints.open_tip == Some(target) && per.hints.tip_claim_free {
        if let Some(blob) = per.blob(target) {
            if blob.range <= ctx.params.camera_range {
                ctx.transition(r, Trigger::RecoveryContact, RobotState::Subgoal);
                r.anchored_pos = Some(r.pos);
                r.recovery_target = None;
                ctx.intent = Intent::Anchor { target };
            }
        }
    }
}

fn optimization_step(r: &mut Robot, ctx: &mut Ctx) {
    let per = ctx.per;
    ctx.actuation = Actuation::Hold;
    let Some(mut opt) = r.opt.clone() else {
        return;
    };

    let nest_blob = per.blob(opt.nest_ref).copied();
    let goal_blob = per.blob(opt.goal_ref).copied();

    if opt.converged {
        if r.state == RobotState::HeuristicOpt1 {
            // Move on to the mirror pass when the goal-side pattern shows:
            // the goal landmark for the chain's far end, a neighbor that
            // finished its own second pass otherwise.
            let ready_hint = per.hints.chain_refs.map(|c| c.goal_ready).unwrap_or(false);
            let goal_side_ready = match opt.goal_ref {
                BlobSource::Goal => goal_blob.is_some(),
                BlobSource::Robot(_) => ready_hint && goal_blob.is_some(),
                BlobSource::Nest => false,
            };
            if goal_side_ready {
                ctx.transition(r, Trigger::StartOpt2, RobotState::HeuristicOpt2);
                opt.pass = OptPass::Two;
                opt.converged = false;
                opt.last_err = None;
                opt.stall_ticks = 0;
                r.opt = Some(opt);
            }
        }
        // Converged in pass two: hold the pattern until the run completes.
        return;
    }

    let (Some(nb), Some(gb)) = (nest_blob, goal_blob) else {
        // An anchor is momentarily hidden: pause. If it never comes back,
        // settle where we are rather than wedging the run.
        opt.stall_ticks += 1;
        if opt.stall_ticks > OPT_STALL_TICKS * 4 {
            converge(r, &mut opt, ctx);
        } else {
            r.opt = Some(opt);
        }
        return;
    };

    let p_nest = blob_world_pos(r, &nb);
    let p_goal = blob_world_pos(r, &gb);
    let geom = AlignmentGeometry {
        theta1: gb.bearing,
        theta2: nb.bearing,
        x_dist: gb.range,
        y_dist: nb.range,
    };
    let err = alignment_error(&geom);
    ctx.events.push(StepEvent::OptMove { err });

    if err < ctx.params.align_epsilon {
        converge(r, &mut opt, ctx);
        return;
    }

    // Perpendicular descent onto the chord between the two anchors.
    let chord = p_goal - p_nest;
    let len_sq = chord.norm_sq();
    if len_sq < 1e-12 {
        converge(r, &mut opt, ctx);
        return;
    }
    let t = (r.pos - p_nest).dot(chord) / len_sq;
    let foot = p_nest + chord.scale(t.clamp(0.05, 0.95));
    let to_foot = foot - r.pos;
    let dist = to_foot.norm();
    if dist < OPT_MIN_STEP {
        converge(r, &mut opt, ctx);
        return;
    }

    // No progress for a while (blocked by an obstacle or another robot):
    // settle in place.
    if let Some(last) = opt.last_err {
        if (last - err).abs() < 1e-7 {
            opt.stall_ticks += 1;
            if opt.stall_ticks > OPT_STALL_TICKS {
                converge(r, &mut opt, ctx);
                return;
            }
        } else {
            opt.stall_ticks = 0;
        }
    }
    opt.last_err = Some(err);

    let step = ctx.params.opt_step.min(dist);
    ctx.actuation = Actuation::Glide {
        delta: to_foot.scale(step / dist),
    };
    r.opt = Some(opt);
}

fn converge(r: &mut Robot, opt: &mut OptState, ctx: &mut Ctx) {
    opt.converged = true;
    opt.stall_ticks = 0;
    ctx.events.push(StepEvent::OptConverged { pass: opt.pass });
    r.opt = Some(opt.clone());
}

fn sees_robot_color(per: &Perception, colors: &[SignalColor]) -> bool {
    per.blobs.iter().any(|b| {
        matches!(b.source, BlobSource::Robot(_)) && colors.contains(&b.color)
    })
}

/// World-frame position of a blob as seen from the robot.
fn blob_world_pos(r: &Robot, blob: &Blob) -> Vec2 {
    r.pos + Vec2::from_angle(r.heading + blob.bearing).scale(blob.range)
}
