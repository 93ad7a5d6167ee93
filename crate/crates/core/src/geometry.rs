//! Workspace, box obstacles, robot footprints and collision checking.
//!
//! Robot bodies are oriented rectangles; obstacles are axis-aligned boxes.
//! Overlap is decided by the separating-axis test over the four candidate
//! axes (two box axes, two body axes). The same separation value, with its
//! gradient, is used by the optimizer as a signed-distance surrogate.

use std::path::Path;

use crate::dynamics::{State, SystemKind, SystemModel};
use crate::primitives::MotionPrimitive;
use crate::Result;

/// Axis-aligned box given by its corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: [f64::INFINITY; 2],
        max: [f64::NEG_INFINITY; 2],
    };

    pub fn from_center(center: [f64; 2], half: [f64; 2]) -> Self {
        Aabb {
            min: [center[0] - half[0], center[1] - half[1]],
            max: [center[0] + half[0], center[1] + half[1]],
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn half_extents(&self) -> [f64; 2] {
        [
            0.5 * (self.max[0] - self.min[0]),
            0.5 * (self.max[1] - self.min[1]),
        ]
    }

    pub fn grow(&mut self, other: &Aabb) {
        for i in 0..2 {
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
    }

    pub fn include_point(&mut self, p: [f64; 2]) {
        for i in 0..2 {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }

    pub fn translated(&self, offset: [f64; 2]) -> Aabb {
        Aabb {
            min: [self.min[0] + offset[0], self.min[1] + offset[1]],
            max: [self.max[0] + offset[0], self.max[1] + offset[1]],
        }
    }

    /// Strict overlap: touching boxes do not intersect.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..2).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// Closed containment.
    pub fn contains(&self, other: &Aabb) -> bool {
        (0..2).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Workspace bounds plus box obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub bounds: Aabb,
    pub obstacles: Vec<Aabb>,
}

impl Environment {
    pub fn new(min: [f64; 2], max: [f64; 2], obstacles: Vec<Aabb>) -> Result<Self> {
        let env = Environment {
            bounds: Aabb { min, max },
            obstacles,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
            return Err(crate::Error::validation(
                "environment",
                format!("min {:?} must be below max {:?}", b.min, b.max),
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let h = o.half_extents();
            if !(h[0] > 0.0 && h[1] > 0.0) || !h.iter().all(|v| v.is_finite()) {
                return Err(crate::Error::validation(
                    "environment",
                    format!("obstacle {i} has non-positive size"),
                ));
            }
        }
        Ok(())
    }
}

/// Where a body sits relative to the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mount {
    /// Centered on `(x, y)`, oriented by `theta0`.
    Base,
    /// Centered `distance` behind `(x, y)` along `theta1`, oriented by `theta1`.
    Trailer { distance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub length: f64,
    pub width: f64,
    pub mount: Mount,
}

impl Body {
    pub fn half_extents(&self) -> [f64; 2] {
        [0.5 * self.length, 0.5 * self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotShape {
    pub bodies: Vec<Body>,
}

impl RobotShape {
    /// Footprints used when a scenario does not override them.
    pub fn default_for(system: &SystemModel) -> Self {
        match system.kind {
            SystemKind::Unicycle1 | SystemKind::Unicycle2 => RobotShape {
                bodies: vec![Body {
                    length: 0.5,
                    width: 0.25,
                    mount: Mount::Base,
                }],
            },
            SystemKind::CarWithTrailer => RobotShape {
                bodies: vec![
                    Body {
                        length: 0.25,
                        width: 0.25,
                        mount: Mount::Base,
                    },
                    Body {
                        length: 0.3,
                        width: 0.25,
                        mount: Mount::Trailer {
                            distance: system.params.hitch_length,
                        },
                    },
                ],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies.is_empty() {
            return Err(crate::Error::validation("robot", "no bodies"));
        }
        for b in &self.bodies {
            if !(b.length > 0.0 && b.width > 0.0) {
                return Err(crate::Error::validation("robot", "body dimensions must be positive"));
            }
        }
        Ok(())
    }
}

/// Planar pose of one body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub center: [f64; 2],
    pub angle: f64,
}

/// Pose of `body` for state `x`.
pub fn body_pose(body: &Body, x: &State) -> Pose {
    match body.mount {
        Mount::Base => Pose {
            center: [x[0], x[1]],
            angle: x[2],
        },
        Mount::Trailer { distance } => {
            let th = x[3];
            Pose {
                center: [x[0] - distance * th.cos(), x[1] - distance * th.sin()],
                angle: th,
            }
        }
    }
}

/// Tight bounding box of an oriented rectangle.
pub fn rect_aabb(pose: &Pose, half: [f64; 2]) -> Aabb {
    let (s, c) = pose.angle.sin_cos();
    let ex = half[0] * c.abs() + half[1] * s.abs();
    let ey = half[0] * s.abs() + half[1] * c.abs();
    Aabb::from_center(pose.center, [ex, ey])
}

/// Separation between an oriented rectangle and a box along the best
/// separating axis. Positive iff the shapes are disjoint; when overlapping it
/// equals minus the penetration depth.
///
/// Returns the value and its gradient with respect to `(cx, cy, angle)`.
pub fn sat_separation(pose: &Pose, half: [f64; 2], obstacle: &Aabb) -> (f64, [f64; 3]) {
    let [hl, hw] = half;
    let oc = obstacle.center();
    let [hx, hy] = obstacle.half_extents();
    let (s, c) = pose.angle.sin_cos();
    let dx = oc[0] - pose.center[0];
    let dy = oc[1] - pose.center[1];
    let sg = |v: f64| if v >= 0.0 { 1.0 } else { -1.0 };

    // box x axis
    let v_x = dx.abs() - (hl * c.abs() + hw * s.abs()) - hx;
    let g_x = [
        -sg(dx),
        0.0,
        -(hl * sg(c) * (-s) + hw * sg(s) * c),
    ];
    // box y axis
    let v_y = dy.abs() - (hl * s.abs() + hw * c.abs()) - hy;
    let g_y = [
        0.0,
        -sg(dy),
        -(hl * sg(s) * c + hw * sg(c) * (-s)),
    ];
    // body length axis u = (c, s)
    let pu = dx * c + dy * s;
    let dpu = -dx * s + dy * c;
    let v_u = pu.abs() - hl - (hx * c.abs() + hy * s.abs());
    let g_u = [
        -sg(pu) * c,
        -sg(pu) * s,
        sg(pu) * dpu - (hx * sg(c) * (-s) + hy * sg(s) * c),
    ];
    // body width axis n = (-s, c)
    let pn = -dx * s + dy * c;
    let dpn = -dx * c - dy * s;
    let v_n = pn.abs() - hw - (hx * s.abs() + hy * c.abs());
    let g_n = [
        sg(pn) * s,
        -sg(pn) * c,
        sg(pn) * dpn - (hx * sg(s) * c + hy * sg(c) * (-s)),
    ];

    let mut best = (v_x, g_x);
    for cand in [(v_y, g_y), (v_u, g_u), (v_n, g_n)] {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

/// True iff the rectangle and the box share interior points.
pub fn rect_overlaps_box(pose: &Pose, half: [f64; 2], obstacle: &Aabb) -> bool {
    if !rect_aabb(pose, half).intersects(obstacle) {
        return false;
    }
    sat_separation(pose, half, obstacle).0 < 0.0
}

fn body_collides(env: &Environment, body: &Body, x: &State) -> bool {
    let pose = body_pose(body, x);
    let half = body.half_extents();
    env.obstacles.iter().any(|o| rect_overlaps_box(&pose, half, o))
}

/// Translation inside the workspace, every body clear of every obstacle, and
/// the system's own state bounds. Bodies may stick out of the workspace.
pub fn state_valid(env: &Environment, shape: &RobotShape, system: &SystemModel, x: &State) -> bool {
    env.bounds.contains_point(x.translation())
        && system.state_in_bounds(x)
        && !shape.bodies.iter().any(|b| body_collides(env, b, x))
}

/// Precomputed bounds of a motion in its canonical frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweptVolume {
    /// Bounds of the translational components of all states.
    pub positions: Aabb,
    /// Bounds of every body rectangle over all states.
    pub bodies: Aabb,
}

impl SweptVolume {
    pub fn compute(shape: &RobotShape, states: &[State]) -> Self {
        let mut positions = Aabb::EMPTY;
        let mut bodies = Aabb::EMPTY;
        for x in states {
            positions.include_point(x.translation());
            for b in &shape.bodies {
                bodies.grow(&rect_aabb(&body_pose(b, x), b.half_extents()));
            }
        }
        SweptVolume { positions, bodies }
    }
}

/// Validity of `primitive ⊕ offset`, using the swept volume to skip narrow
/// checks whenever it proves the whole motion clear.
pub fn motion_valid(
    env: &Environment,
    shape: &RobotShape,
    system: &SystemModel,
    primitive: &MotionPrimitive,
    offset: [f64; 2],
) -> bool {
    let swept = match primitive.swept() {
        Some(s) => *s,
        None => SweptVolume::compute(shape, &primitive.states),
    };
    // The position box is tight, so leaving it means some state leaves the workspace.
    if !env.bounds.contains(&swept.positions.translated(offset)) {
        return false;
    }
    let bodies = swept.bodies.translated(offset);
    let candidates: Vec<&Aabb> = env.obstacles.iter().filter(|o| bodies.intersects(o)).collect();
    // Rotational state bounds do not depend on the offset.
    if !primitive.states.iter().all(|x| system.state_in_bounds(x)) {
        return false;
    }
    if candidates.is_empty() {
        return true;
    }
    primitive.states.iter().all(|x| {
        let xt = x.translated(offset);
        shape.bodies.iter().all(|b| {
            let pose = body_pose(b, &xt);
            let half = b.half_extents();
            candidates.iter().all(|o| !rect_overlaps_box(&pose, half, o))
        })
    })
}

/// Per-state reference check without any broadphase.
pub fn motion_valid_exhaustive(
    env: &Environment,
    shape: &RobotShape,
    system: &SystemModel,
    primitive: &MotionPrimitive,
    offset: [f64; 2],
) -> bool {
    primitive
        .states
        .iter()
        .all(|x| state_valid(env, shape, system, &x.translated(offset)))
}

/// Reads the environment section of a scenario file.
pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    Ok(crate::scenario::Scenario::load(path)?.environment)
}
