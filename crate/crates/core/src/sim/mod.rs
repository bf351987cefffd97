//! Deterministic tick engine: perception snapshot, controller evaluation,
//! kinematics, collision resolution, staged messaging and the event log.

mod engine;
mod motion;

pub use motion::resolve_collisions;

use crate::agent::{Delivery, Robot, RobotState};
use crate::comms::AllocationResult;
use crate::geom::Vec2;
use crate::params::SimParams;
use crate::world::{line_of_sight, ArenaSpec, BlobSource};
use serde::Serialize;
use thiserror::Error;

/// FNV-1a 64 offset basis; the digest of an empty event log.
pub const EMPTY_TRACE_HASH: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// One event-log record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub tick: u64,
    pub robot_id: Option<u32>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    StateChange {
        from: RobotState,
        to: RobotState,
        trigger: char,
    },
    /// This robot became the goal founder.
    GoalFound,
    Anchored {
        x: f64,
        y: f64,
        target: String,
    },
    ChainClosed {
        links: u32,
    },
    RoundOpened {
        n: u32,
        discovery_ticks: u32,
    },
    RoundClosed {
        shortfall: u32,
    },
    /// Protocol milestone frame, hex-encoded for audit.
    FrameSent {
        to: Option<u32>,
        hex: String,
    },
    RecoveryHandoff {
        to: u32,
    },
    /// Alignment error sample while optimizing (one per tick, unconverged).
    OptError {
        pass: u8,
        err: f64,
    },
    OptConverged {
        pass: u8,
    },
    PathFormed {
        links: u32,
    },
}

/// Append-only event log with an order-sensitive 64-bit digest.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, tick: u64, robot_id: Option<u32>, kind: EventKind) {
        self.events.push(Event {
            tick,
            robot_id,
            kind,
        });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Line-delimited JSON export.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Order-sensitive FNV-1a digest over a canonical byte encoding of the log.
pub fn trace_hash(log: &EventLog) -> u64 {
    let mut h = EMPTY_TRACE_HASH;
    let mut write = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for e in &log.events {
        write(&e.tick.to_le_bytes());
        write(&e.robot_id.map(|r| r + 1).unwrap_or(0).to_le_bytes());
        match &e.kind {
            EventKind::StateChange { from, to, trigger } => {
                write(&[1, *trigger as u8]);
                write(format!("{from}>{to}").as_bytes());
            }
            EventKind::GoalFound => write(&[2]),
            EventKind::Anchored { x, y, target } => {
                write(&[3]);
                write(&x.to_bits().to_le_bytes());
                write(&y.to_bits().to_le_bytes());
                write(target.as_bytes());
            }
            EventKind::ChainClosed { links } => {
                write(&[4]);
                write(&links.to_le_bytes());
            }
            EventKind::RoundOpened { n, discovery_ticks } => {
                write(&[5]);
                write(&n.to_le_bytes());
                write(&discovery_ticks.to_le_bytes());
            }
            EventKind::RoundClosed { shortfall } => {
                write(&[6]);
                write(&shortfall.to_le_bytes());
            }
            EventKind::FrameSent { to, hex } => {
                write(&[7]);
                write(&to.map(|t| t + 1).unwrap_or(0).to_le_bytes());
                write(hex.as_bytes());
            }
            EventKind::RecoveryHandoff { to } => {
                write(&[8]);
                write(&to.to_le_bytes());
            }
            EventKind::OptError { pass, err } => {
                write(&[9, *pass]);
                write(&err.to_bits().to_le_bytes());
            }
            EventKind::OptConverged { pass } => write(&[10, *pass]),
            EventKind::PathFormed { links } => {
                write(&[11]);
                write(&links.to_le_bytes());
            }
        }
    }
    h
}

/// One anchored subgoal and what it anchored off.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLink {
    pub robot_id: u32,
    pub pos: Vec2,
    pub target: BlobSource,
}

/// Engine-side registry of the growing subgoal chain.
#[derive(Debug, Clone, Default)]
pub struct ChainState {
    /// Anchors in anchoring order: goal-most first.
    pub links: Vec<ChainLink>,
    pub closed: bool,
    /// Robot currently positioning against the open tip.
    pub claim: Option<u32>,
    pub claim_tick: u64,
    /// Anchor polyline captured when the chain closed (nest-to-goal order,
    /// endpoints excluded).
    pub raw_anchor_positions: Option<Vec<(u32, Vec2)>>,
}

impl ChainState {
    pub fn open_tip(&self) -> Option<BlobSource> {
        if self.closed {
            return None;
        }
        Some(match self.links.last() {
            Some(link) => BlobSource::Robot(link.robot_id),
            None => BlobSource::Goal,
        })
    }

    pub fn link_index(&self, robot_id: u32) -> Option<usize> {
        self.links.iter().position(|l| l.robot_id == robot_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocPhase {
    Disabled,
    Searching,
    RoundOpen,
    Closed,
}

#[derive(Debug, Clone)]
pub struct AllocationState {
    pub phase: AllocPhase,
    pub founder: Option<u32>,
    pub result: Option<AllocationResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    PathFormed,
    Timeout,
    Deadlock,
}

/// Final report of one run.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub status: RunStatus,
    pub ticks_elapsed: u64,
    /// Final anchor polyline (nest-to-goal, endpoints excluded).
    pub chain_anchors: Option<Vec<(u32, Vec2)>>,
    /// Anchor polyline as it stood when the chain first closed.
    pub raw_chain_anchors: Option<Vec<(u32, Vec2)>>,
    pub robots_active: u32,
    pub robots_resting: u32,
    pub allocation: Option<AllocationResult>,
    pub trace_hash: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("could not place {placed} of {requested} robots around the nest")]
    SpawnFailed { placed: usize, requested: usize },
    #[error("simulation fault at tick {tick}: {message}")]
    Fault { tick: u64, message: String },
}

/// A full simulation run: arena, robots, chain registry, allocation state
/// and the event log.
pub struct Simulation {
    pub params: SimParams,
    pub arena: ArenaSpec,
    pub robots: Vec<Robot>,
    pub tick: u64,
    pub chain: ChainState,
    pub alloc: AllocationState,
    pub events: EventLog,
    pub(crate) inboxes: Vec<Vec<Delivery>>,
    pub(crate) path_formed: bool,
    pub(crate) last_activity_tick: u64,
    pub(crate) fault: Option<String>,
    /// "At the nest" radius, grown so the whole swarm fits around it.
    pub(crate) arrival_radius: f64,
}

impl Simulation {
    pub fn new(
        arena: ArenaSpec,
        params: SimParams,
        robot_count: u32,
        seed: u64,
    ) -> Result<Simulation, SimError> {
        params.validate().map_err(SimError::BadParams)?;
        arena
            .validate()
            .map_err(|e| SimError::BadParams(e.to_string()))?;
        if robot_count == 0 {
            return Err(SimError::BadParams("robot_count must be positive".into()));
        }
        let positions = spawn_positions(&arena, &params, robot_count as usize)?;
        let initial_budget = params.initial_budget_ticks();
        let rest = params.min_rest_ticks();
        let robots: Vec<Robot> = positions
            .into_iter()
            .enumerate()
            .map(|(i, pos)| {
                let mut r = Robot::new(i as u32, pos, 0.0, seed, initial_budget);
                r.resting_ticks_remaining = Some(rest);
                use rand::Rng;
                r.heading = r.rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
                r
            })
            .collect();
        let n = robots.len();
        let alloc_phase = if params.task_allocation {
            AllocPhase::Searching
        } else {
            AllocPhase::Disabled
        };
        // A packed swarm occupies the free space around the nest; "arrival"
        // must be reachable from outside that pack, walls and obstacles
        // included.
        let arrival_radius = arrival_radius_for(&arena, &params, robot_count);
        Ok(Simulation {
            params,
            arena,
            robots,
            tick: 0,
            chain: ChainState::default(),
            alloc: AllocationState {
                phase: alloc_phase,
                founder: None,
                result: None,
            },
            events: EventLog::default(),
            inboxes: vec![Vec::new(); n],
            path_formed: false,
            last_activity_tick: 0,
            fault: None,
            arrival_radius,
        })
    }

    /// Run to completion: path formed, timeout, deadlock or fault.
    pub fn run(&mut self) -> Result<SimOutcome, SimError> {
        // Degenerate arena: the nest sees the goal directly, no chain needed.
        let direct = line_of_sight(
            self.arena.nest.center,
            self.arena.goal.center,
            &self.arena,
            self.params.camera_range,
        );
        if direct.visible {
            self.events.push(0, None, EventKind::PathFormed { links: 0 });
            self.path_formed = true;
            self.chain.closed = true;
            self.chain.raw_anchor_positions = Some(Vec::new());
            return Ok(self.outcome(RunStatus::PathFormed));
        }

        while self.tick < self.params.max_ticks {
            self.step();
            if let Some(msg) = self.fault.take() {
                return Err(SimError::Fault {
                    tick: self.tick,
                    message: msg,
                });
            }
            if self.path_formed {
                return Ok(self.outcome(RunStatus::PathFormed));
            }
            if self.tick - self.last_activity_tick > self.params.deadlock_window {
                return Ok(self.outcome(RunStatus::Deadlock));
            }
        }
        Ok(self.outcome(RunStatus::Timeout))
    }

    pub(crate) fn outcome(&self, status: RunStatus) -> SimOutcome {
        let resting = self
            .robots
            .iter()
            .filter(|r| r.state == RobotState::Resting)
            .count() as u32;
        let final_anchors: Option<Vec<(u32, Vec2)>> = if self.chain.closed {
            // nest-to-goal order: reverse of anchoring order, current poses
            Some(
                self.chain
                    .links
                    .iter()
                    .rev()
                    .map(|l| {
                        let pos = self.robots[l.robot_id as usize].pos;
                        (l.robot_id, pos)
                    })
                    .collect(),
            )
        } else {
            None
        };
        SimOutcome {
            status,
            ticks_elapsed: self.tick,
            chain_anchors: final_anchors,
            raw_chain_anchors: self.chain.raw_anchor_positions.clone(),
            robots_active: self.robots.len() as u32 - resting,
            robots_resting: resting,
            allocation: self.alloc.result.clone(),
            trace_hash: trace_hash(&self.events),
        }
    }
}

/// Radius around the nest whose free area fits the whole swarm at packing
/// density, scaled up a little; everything within counts as "at the nest".
fn arrival_radius_for(arena: &ArenaSpec, params: &SimParams, count: u32) -> f64 {
    let per_robot = std::f64::consts::PI * params.robot_radius * params.robot_radius / 0.55;
    let needed = count as f64 * per_robot * 1.3;
    let cell = 0.05;
    let nest = arena.nest.center;
    let max_radius = arena.width.hypot(arena.height);
    let mut radius = params.nest_arrival_radius;
    while radius < max_radius {
        let steps = (2.0 * radius / cell).ceil() as i64;
        let mut area = 0.0;
        for ix in 0..steps {
            for iy in 0..steps {
                let p = Vec2::new(
                    nest.x - radius + (ix as f64 + 0.5) * cell,
                    nest.y - radius + (iy as f64 + 0.5) * cell,
                );
                if p.distance(nest) > radius || !arena.contains(p) {
                    continue;
                }
                if arena.obstacles.iter().any(|ob| ob.contains(p)) {
                    continue;
                }
                area += cell * cell;
            }
        }
        if area >= needed {
            return radius * 1.1;
        }
        radius += 0.1;
    }
    radius
}

/// Sunflower layout around the nest, filtered to free space.
fn spawn_positions(
    arena: &ArenaSpec,
    params: &SimParams,
    count: usize,
) -> Result<Vec<Vec2>, SimError> {
    let spacing = params.robot_radius * 2.3;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let margin = params.robot_radius + 0.005;
    let mut out = Vec::with_capacity(count);
    let mut k = 0usize;
    while out.len() < count && k < count * 30 {
        let r = spacing * (k as f64 + 0.5).sqrt();
        let theta = k as f64 * golden;
        let pos = arena.nest.center + Vec2::from_angle(theta).scale(r);
        k += 1;
        if pos.x < margin
            || pos.y < margin
            || pos.x > arena.width - margin
            || pos.y > arena.height - margin
        {
            continue;
        }
        if arena
            .obstacles
            .iter()
            .any(|ob| ob.distance_to(pos) < params.robot_radius + 0.005)
        {
            continue;
        }
        out.push(pos);
    }
    if out.len() < count {
        return Err(SimError::SpawnFailed {
            placed: out.len(),
            requested: count,
        });
    }
    Ok(out)
}
