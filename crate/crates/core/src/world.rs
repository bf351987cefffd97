//! Static arena geometry and the field queries every agent runs each tick:
//! light gradient toward the nest, proximity diffusion, occlusion-aware
//! line of sight and the colored-blob camera.

use crate::geom::{wrap_angle, Rect, Vec2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Omnidirectional camera range in meters. Everything visual in the
/// controller (subgoal spotting, chain links, landmark detection) is bounded
/// by this radius.
pub const CAMERA_RANGE_M: f64 = 1.0;

/// Saturated light reading returned when standing on the light source.
pub const LIGHT_READING_CAP: f64 = 1e12;

const LIGHT_EPSILON: f64 = 1e-9;

/// Disk landmark (nest or goal marker on the arena floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec2,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, p: Vec2) -> bool {
        p.distance(self.center) <= self.radius
    }
}

/// Rectangular world with axis-aligned obstacles and two disk landmarks.
/// The light source sits on the nest so the light gradient doubles as the
/// homing potential field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArenaSpec {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub nest: Disk,
    pub goal: Disk,
    #[serde(default)]
    pub light_source: Option<Vec2>,
    #[serde(default = "default_intensity")]
    pub reference_intensity: f64,
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("arena i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("arena parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid arena: {0}")]
    Invalid(String),
}

impl ArenaSpec {
    pub fn light_source(&self) -> Vec2 {
        self.light_source.unwrap_or(self.nest.center)
    }

    pub fn bounds(&self) -> Rect {
        Rect::from_bounds(0.0, 0.0, self.width, self.height)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.bounds().contains(p)
    }

    pub fn load(path: &Path) -> Result<ArenaSpec, ArenaError> {
        let text = std::fs::read_to_string(path)?;
        let arena: ArenaSpec = serde_json::from_str(&text)?;
        arena.validate()?;
        Ok(arena)
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        let fail = |msg: String| Err(ArenaError::Invalid(msg));
        if !(self.width > 0.0 && self.height > 0.0) {
            return fail(format!("non-positive size {}x{}", self.width, self.height));
        }
        let bounds = self.bounds();
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.width() <= 0.0 || ob.height() <= 0.0 {
                return fail(format!("obstacle {i} has non-positive extent"));
            }
            if !(bounds.contains(ob.min) && bounds.contains(ob.max)) {
                return fail(format!("obstacle {i} extends outside bounds"));
            }
        }
        for (name, disk) in [("nest", &self.nest), ("goal", &self.goal)] {
            if disk.radius <= 0.0 {
                return fail(format!("{name} radius must be positive"));
            }
            let c = disk.center;
            if c.x - disk.radius < 0.0
                || c.y - disk.radius < 0.0
                || c.x + disk.radius > self.width
                || c.y + disk.radius > self.height
            {
                return fail(format!("{name} disk extends outside bounds"));
            }
            for (i, ob) in self.obstacles.iter().enumerate() {
                if ob.distance_to(c) < disk.radius {
                    return fail(format!("{name} disk intersects obstacle {i}"));
                }
            }
        }
        Ok(())
    }
}

/// LED palette. One entry per behavioral signal plus the two landmark
/// colors. `Black` means the ring is off and is never reported as a blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalColor {
    Black,
    White,
    Cyan,
    Red,
    Blue,
    RedYellow,
    Magenta,
    IntenseMagenta,
    DashedMagenta,
    NestBlue,
    GoalPink,
}

impl fmt::Display for SignalColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalColor::Black => "black",
            SignalColor::White => "white",
            SignalColor::Cyan => "cyan",
            SignalColor::Red => "red",
            SignalColor::Blue => "blue",
            SignalColor::RedYellow => "red_yellow",
            SignalColor::Magenta => "magenta",
            SignalColor::IntenseMagenta => "intense_magenta",
            SignalColor::DashedMagenta => "dashed_magenta",
            SignalColor::NestBlue => "nest_blue",
            SignalColor::GoalPink => "goal_pink",
        };
        f.write_str(s)
    }
}

/// What emitted a blob. Ordering (robots by id, then nest, then goal) is the
/// deterministic tie-break for equal-range blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlobSource {
    Robot(u32),
    Nest,
    Goal,
}

/// A colored blob seen by the omnidirectional camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub color: SignalColor,
    pub range: f64,
    /// Bearing in the observer's body frame, (-pi, pi].
    pub bearing: f64,
    pub source: BlobSource,
}

/// Outcome of a line-of-sight query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityResult {
    pub visible: bool,
    pub range: f64,
    pub occluded_by_obstacle: bool,
    pub out_of_range: bool,
}

/// True iff the open segment (p1, p2) crosses any obstacle interior.
pub fn segment_intersects_obstacle(p1: Vec2, p2: Vec2, arena: &ArenaSpec) -> bool {
    arena
        .obstacles
        .iter()
        .any(|ob| ob.segment_crosses_interior(p1, p2))
}

/// Visibility between two points: within `max_range` and unobstructed.
pub fn line_of_sight(
    observer: Vec2,
    target: Vec2,
    arena: &ArenaSpec,
    max_range: f64,
) -> VisibilityResult {
    let range = observer.distance(target);
    let out_of_range = range > max_range;
    let occluded_by_obstacle = segment_intersects_obstacle(observer, target, arena);
    VisibilityResult {
        visible: !out_of_range && !occluded_by_obstacle,
        range,
        occluded_by_obstacle,
        out_of_range,
    }
}

/// Light sensor reading R = (I/x)^2 for distance x to the light source.
pub fn light_reading(pos: Vec2, arena: &ArenaSpec) -> f64 {
    let x = pos.distance(arena.light_source());
    if x < LIGHT_EPSILON {
        return LIGHT_READING_CAP;
    }
    let r = arena.reference_intensity / x;
    r * r
}

/// Unit vector up the light gradient, i.e. straight toward the nest.
/// Zero at the nest center itself.
pub fn nest_potential_vector(pos: Vec2, arena: &ArenaSpec) -> Vec2 {
    (arena.light_source() - pos).normalized()
}

/// Repulsive resultant of a proximity ring: unit vectors at the reading
/// bearings, scaled by the readings, summed and negated.
pub fn diffusion_vector(readings: &[(f64, f64)]) -> Vec2 {
    let mut sum = Vec2::ZERO;
    for &(bearing, value) in readings {
        sum += Vec2::from_angle(bearing).scale(value);
    }
    -sum
}

/// A lit LED (or landmark) that the camera may pick up.
#[derive(Debug, Clone, Copy)]
pub struct LedSource {
    pub source: BlobSource,
    pub pos: Vec2,
    pub color: SignalColor,
}

/// Collect every visible colored blob for an observer at `pos` with body
/// heading `heading`. Landmarks are appended by the caller as `LedSource`s.
/// Result is sorted by range, ties by source id, and never contains a blob
/// whose sight line crosses an obstacle.
pub fn detect_blobs(
    pos: Vec2,
    heading: f64,
    sources: &[LedSource],
    arena: &ArenaSpec,
    max_range: f64,
) -> Vec<Blob> {
    let max_sq = max_range * max_range;
    let mut blobs: Vec<Blob> = Vec::new();
    for src in sources {
        if src.color == SignalColor::Black {
            continue;
        }
        let d = src.pos - pos;
        let d_sq = d.norm_sq();
        if d_sq > max_sq || d_sq < 1e-18 {
            continue;
        }
        if segment_intersects_obstacle(pos, src.pos, arena) {
            continue;
        }
        blobs.push(Blob {
            color: src.color,
            range: d_sq.sqrt(),
            bearing: wrap_angle(d.angle() - heading),
            source: src.source,
        });
    }
    blobs.sort_by(|a, b| {
        a.range
            .partial_cmp(&b.range)
            .unwrap()
            .then(a.source.cmp(&b.source))
    });
    blobs
}
