//! Walking-domain geometry: target, visibility region, walls, exit rule and
//! initial placement of both populations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{segment_intersection, segment_point_distance_sq, Rect, Vector2};

/// Region from which the target is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region {
    /// Open disk `|x - center| < radius`.
    Disk { center: Vector2, radius: f64 },
    /// Closed half-plane `(x - point) . normal >= 0`.
    HalfPlane { point: Vector2, normal: Vector2 },
    Everywhere,
    Nowhere,
}

impl Region {
    pub fn contains(&self, x: Vector2) -> bool {
        match *self {
            Region::Disk { center, radius } => x.distance_sq(center) < radius * radius,
            Region::HalfPlane { point, normal } => (x - point).dot(normal) >= 0.0,
            Region::Everywhere => true,
            Region::Nowhere => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Region::Nowhere)
    }
}

/// Straight wall of finite thickness. Agents only perceive it on contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub a: Vector2,
    pub b: Vector2,
    #[serde(default)]
    pub thickness: f64,
}

impl Wall {
    pub fn new(a: Vector2, b: Vector2, thickness: f64) -> Self {
        Self { a, b, thickness }
    }
}

/// When an agent counts as having left the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExitRule {
    /// Exit once a step passes within `capture_radius` of `point` (closed
    /// disk, swept along the step).
    PointCapture { point: Vector2, capture_radius: f64 },
    /// Exit when a step crosses the door segment `a -> b`.
    SegmentCrossing { a: Vector2, b: Vector2 },
    /// Nobody ever leaves.
    Disabled,
}

impl ExitRule {
    /// Whether the move `from -> to` ends outside the domain.
    pub fn exits(&self, from: Vector2, to: Vector2) -> bool {
        match *self {
            ExitRule::PointCapture { point, capture_radius } => {
                segment_point_distance_sq(from, to, point) <= capture_radius * capture_radius
            }
            ExitRule::SegmentCrossing { a, b } => segment_intersection(from, to, a, b).is_some(),
            ExitRule::Disabled => false,
        }
    }
}

/// Initial velocity assigned at spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocityInit {
    Zero,
    Fixed { velocity: Vector2 },
    /// Fixed speed, uniformly random heading.
    RandomHeading { speed: f64 },
}

impl VelocityInit {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2 {
        match *self {
            VelocityInit::Zero => Vector2::ZERO,
            VelocityInit::Fixed { velocity } => velocity,
            VelocityInit::RandomHeading { speed } => {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                Vector2::new(angle.cos(), angle.sin()) * speed
            }
        }
    }
}

/// Follower spawn box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spawn {
    pub region: Rect,
    pub velocity: VelocityInit,
}

/// Initial leader positions for a given leader count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeaderLayout {
    /// Vertical column at `x`, evenly spaced in `[y_min, y_max]`
    /// (a single leader sits at the midpoint).
    Column { x: f64, y_min: f64, y_max: f64 },
    /// Explicit positions; the first `n` are used.
    Points { positions: Vec<Vector2> },
    /// Uniformly random inside the box.
    Uniform { region: Rect },
}

impl LeaderLayout {
    pub fn place<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vector2>> {
        match self {
            LeaderLayout::Column { x, y_min, y_max } => Ok((0..count)
                .map(|k| {
                    let y = if count == 1 {
                        0.5 * (y_min + y_max)
                    } else {
                        y_min + (y_max - y_min) * k as f64 / (count - 1) as f64
                    };
                    Vector2::new(*x, y)
                })
                .collect()),
            LeaderLayout::Points { positions } => {
                if positions.len() < count {
                    return Err(Error::invalid(
                        "scenario.leader_layout.positions",
                        format!("{count} leaders requested but only {} positions listed", positions.len()),
                    ));
                }
                Ok(positions[..count].to_vec())
            }
            LeaderLayout::Uniform { region } => Ok((0..count)
                .map(|_| {
                    Vector2::new(
                        rng.random_range(region.min.x..=region.max.x),
                        rng.random_range(region.min.y..=region.max.y),
                    )
                })
                .collect()),
        }
    }
}

/// How the hard-sphere freeze resolves conflicting moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    /// Moves are committed one follower at a time in index order, each
    /// checked against the positions committed so far.
    #[default]
    Sequential,
    /// Every move is checked against all other followers' old and proposed
    /// positions; both members of a conflicting pair freeze.
    Simultaneous,
}

/// Complete description of one evacuation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub target: Vector2,
    pub visibility: Region,
    #[serde(default)]
    pub walls: Vec<Wall>,
    pub exit: ExitRule,
    pub followers: usize,
    pub leaders: usize,
    pub follower_spawn: Spawn,
    pub leader_layout: LeaderLayout,
    pub horizon_steps: usize,
    /// Follower diameter for the hard-sphere freeze; 0 disables it.
    #[serde(default)]
    pub hard_sphere_diameter: f64,
    #[serde(default)]
    pub exclusion: Exclusion,
    /// Leaders driven by random smart-obstacle controls stay in this box.
    #[serde(default)]
    pub leader_region: Option<Rect>,
}

impl Scenario {
    /// Herding test: no exit anywhere, crowd in a square.
    pub fn setting0() -> Self {
        Self {
            name: "setting0".into(),
            target: Vector2::new(100.0, 5.0),
            visibility: Region::Nowhere,
            walls: Vec::new(),
            exit: ExitRule::Disabled,
            followers: 150,
            leaders: 5,
            follower_spawn: Spawn {
                region: Rect::new(Vector2::new(0.0, 0.0), Vector2::new(10.0, 10.0)),
                velocity: VelocityInit::Zero,
            },
            leader_layout: LeaderLayout::Column { x: 2.0, y_min: 1.0, y_max: 9.0 },
            horizon_steps: 300,
            hard_sphere_diameter: 0.0,
            exclusion: Exclusion::Sequential,
            leader_region: None,
        }
    }

    /// Open room, point exit at (30, 10) visible within radius 4.
    pub fn setting1() -> Self {
        let exit = Vector2::new(30.0, 10.0);
        Self {
            name: "setting1".into(),
            target: exit,
            visibility: Region::Disk { center: exit, radius: 4.0 },
            walls: Vec::new(),
            exit: ExitRule::PointCapture { point: exit, capture_radius: DEFAULT_CAPTURE_RADIUS },
            followers: 150,
            leaders: 3,
            follower_spawn: Spawn {
                region: Rect::new(Vector2::new(17.0, 6.5), Vector2::new(29.0, 13.5)),
                velocity: VelocityInit::Zero,
            },
            leader_layout: LeaderLayout::Column { x: 16.5, y_min: 8.5, y_max: 11.5 },
            horizon_steps: 2000,
            hard_sphere_diameter: 0.0,
            exclusion: Exclusion::Sequential,
            leader_region: None,
        }
    }

    /// Three-wall room inside a walled domain; the exit door sits high on
    /// the right boundary. Approximate reconstruction of the published
    /// layout, which is only given pictorially.
    pub fn setting2() -> Self {
        let t = 0.1;
        let door_lo = 16.5;
        let door_hi = 17.5;
        let walls = vec![
            // domain boundary, with a door gap on the right side
            Wall::new(Vector2::new(0.0, 0.0), Vector2::new(30.0, 0.0), t),
            Wall::new(Vector2::new(0.0, 20.0), Vector2::new(30.0, 20.0), t),
            Wall::new(Vector2::new(0.0, 0.0), Vector2::new(0.0, 20.0), t),
            Wall::new(Vector2::new(30.0, 0.0), Vector2::new(30.0, door_lo), t),
            Wall::new(Vector2::new(30.0, door_hi), Vector2::new(30.0, 20.0), t),
            // room open on its right side
            Wall::new(Vector2::new(4.0, 6.0), Vector2::new(4.0, 14.0), t),
            Wall::new(Vector2::new(4.0, 14.0), Vector2::new(14.0, 14.0), t),
            Wall::new(Vector2::new(4.0, 6.0), Vector2::new(14.0, 6.0), t),
        ];
        let target = Vector2::new(30.0, 0.5 * (door_lo + door_hi));
        Self {
            name: "setting2".into(),
            target,
            visibility: Region::Disk { center: target, radius: 4.0 },
            walls,
            exit: ExitRule::SegmentCrossing {
                a: Vector2::new(30.0, door_lo),
                b: Vector2::new(30.0, door_hi),
            },
            followers: 100,
            leaders: 2,
            follower_spawn: Spawn {
                region: Rect::new(Vector2::new(5.0, 7.0), Vector2::new(12.0, 13.0)),
                velocity: VelocityInit::Zero,
            },
            leader_layout: LeaderLayout::Points {
                positions: vec![Vector2::new(12.5, 9.0), Vector2::new(12.5, 11.0)],
            },
            horizon_steps: 2000,
            hard_sphere_diameter: 0.0,
            exclusion: Exclusion::Sequential,
            leader_region: None,
        }
    }

    /// Square room with a 0.45-wide door in the right wall; followers have
    /// a hard-sphere diameter of 0.25 and the door is visible everywhere.
    pub fn setting3() -> Self {
        let t = 0.1;
        let door_center = 5.0;
        let half = 0.225;
        let walls = vec![
            Wall::new(Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0), t),
            Wall::new(Vector2::new(0.0, 10.0), Vector2::new(10.0, 10.0), t),
            Wall::new(Vector2::new(0.0, 0.0), Vector2::new(0.0, 10.0), t),
            Wall::new(Vector2::new(10.0, 0.0), Vector2::new(10.0, door_center - half), t),
            Wall::new(Vector2::new(10.0, door_center + half), Vector2::new(10.0, 10.0), t),
        ];
        Self {
            name: "setting3".into(),
            target: Vector2::new(10.5, door_center),
            visibility: Region::Everywhere,
            walls,
            exit: ExitRule::SegmentCrossing {
                a: Vector2::new(10.0, door_center - half),
                b: Vector2::new(10.0, door_center + half),
            },
            followers: 50,
            leaders: 3,
            follower_spawn: Spawn {
                region: Rect::new(Vector2::new(4.0, 2.0), Vector2::new(9.0, 8.0)),
                velocity: VelocityInit::Zero,
            },
            leader_layout: LeaderLayout::Uniform {
                region: Rect::new(Vector2::new(9.5, 4.5), Vector2::new(9.9, 5.5)),
            },
            horizon_steps: 2000,
            hard_sphere_diameter: 0.25,
            exclusion: Exclusion::Sequential,
            leader_region: Some(Rect::new(Vector2::new(9.5, 4.5), Vector2::new(9.9, 5.5))),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "setting0" => Some(Self::setting0()),
            "setting1" => Some(Self::setting1()),
            "setting2" => Some(Self::setting2()),
            "setting3" => Some(Self::setting3()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target.is_finite() {
            return Err(Error::invalid("scenario.target", "must be finite"));
        }
        if !self.visibility.is_empty() && !self.visibility.contains(self.target) {
            return Err(Error::invalid("scenario.visibility", "target must lie inside the visibility region"));
        }
        if let Region::Disk { radius, .. } = self.visibility {
            if !(radius > 0.0) {
                return Err(Error::invalid("scenario.visibility.radius", "must be > 0"));
            }
        }
        if let ExitRule::PointCapture { capture_radius, .. } = self.exit {
            if !(capture_radius > 0.0 && capture_radius.is_finite()) {
                return Err(Error::invalid("scenario.exit.capture_radius", "must be > 0"));
            }
        }
        if self.horizon_steps == 0 {
            return Err(Error::invalid("scenario.horizon_steps", "must be positive"));
        }
        if !self.follower_spawn.region.is_valid() {
            return Err(Error::invalid("scenario.follower_spawn.region", "min must not exceed max"));
        }
        if !(self.hard_sphere_diameter >= 0.0) {
            return Err(Error::invalid("scenario.hard_sphere_diameter", "must be >= 0"));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.a.is_finite() && w.b.is_finite() && w.a != w.b && w.thickness >= 0.0) {
                return Err(Error::invalid(format!("scenario.walls[{i}]"), "degenerate wall"));
            }
        }
        Ok(())
    }

    /// Draws follower positions uniformly in the spawn box. With a
    /// hard-sphere diameter, positions closer than the diameter are redrawn.
    pub fn spawn_followers<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(Vector2, Vector2)> {
        let region = self.follower_spawn.region;
        let min_sep_sq = self.hard_sphere_diameter * self.hard_sphere_diameter;
        let mut out: Vec<(Vector2, Vector2)> = Vec::with_capacity(count);
        while out.len() < count {
            let mut attempts = 0;
            let p = loop {
                let p = Vector2::new(
                    rng.random_range(region.min.x..=region.max.x),
                    rng.random_range(region.min.y..=region.max.y),
                );
                attempts += 1;
                if min_sep_sq == 0.0
                    || attempts > 1000
                    || out.iter().all(|(q, _)| q.distance_sq(p) >= min_sep_sq)
                {
                    break p;
                }
            };
            let v = self.follower_spawn.velocity.sample(rng);
            out.push((p, v));
        }
        out
    }
}

/// Capture radius of the point exits of Settings 0-1.
pub const DEFAULT_CAPTURE_RADIUS: f64 = 0.1;
