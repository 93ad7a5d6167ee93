//! Per-step residuals of the direct transcription and their analytic derivatives.
//!
//! Decision variables come in blocks `[x_k, e_k]` where `e_k` holds the
//! controls that cannot be recovered from consecutive states (the trailer's
//! steering angle). A transition couples `[x_k, e_k, x_{k+1}]`; that local
//! layout is what every gradient below is expressed in.

use crate::dynamics::{wrap_angle, Control, State, SystemKind, SystemModel};
use crate::geometry::{body_pose, sat_separation, Environment, Mount, RobotShape};

/// Widest transition layout: unicycle2, `2 * 5 + 0`.
pub const MAX_LOCAL: usize = 11;

#[derive(Clone, Debug)]
pub struct TransitionEval {
    /// Dynamics defects scaled by `1/dt`, velocity units.
    pub eq: [f64; 3],
    pub d_eq: [[f64; MAX_LOCAL]; 3],
    pub n_eq: usize,
    /// Recovered controls.
    pub u: [f64; 2],
    pub d_u: [[f64; MAX_LOCAL]; 2],
}

impl TransitionEval {
    fn zeros(n_eq: usize) -> Self {
        Self {
            eq: [0.0; 3],
            d_eq: [[0.0; MAX_LOCAL]; 3],
            n_eq,
            u: [0.0; 2],
            d_u: [[0.0; MAX_LOCAL]; 2],
        }
    }
}

/// Layout of the decision vector for one system.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub nx: usize,
    pub ne: usize,
}

impl Layout {
    pub fn for_system(sys: &SystemModel) -> Self {
        let ne = match sys.kind {
            SystemKind::CarWithTrailer => 1,
            _ => 0,
        };
        Layout { nx: sys.d_x, ne }
    }

    pub fn block(&self) -> usize {
        self.nx + self.ne
    }

    /// Width of `[x_k, e_k, x_{k+1}]`.
    pub fn local(&self) -> usize {
        self.block() + self.nx
    }
}

/// Evaluates the transition `x0 -> x1` with extra controls `e0`.
pub fn transition(sys: &SystemModel, x0: &[f64], e0: &[f64], x1: &[f64]) -> TransitionEval {
    let dt = sys.dt;
    let inv = 1.0 / dt;
    match sys.kind {
        SystemKind::Unicycle1 => {
            // [x0 y0 th0 | x1 y1 th1]
            let mut t = TransitionEval::zeros(1);
            let (dx, dy) = (x1[0] - x0[0], x1[1] - x0[1]);
            let (s, c) = x0[2].sin_cos();
            t.u[0] = (dx * c + dy * s) * inv;
            t.d_u[0][0] = -c * inv;
            t.d_u[0][1] = -s * inv;
            t.d_u[0][2] = (-dx * s + dy * c) * inv;
            t.d_u[0][3] = c * inv;
            t.d_u[0][4] = s * inv;
            t.u[1] = wrap_angle(x1[2] - x0[2]) * inv;
            t.d_u[1][2] = -inv;
            t.d_u[1][5] = inv;
            t.eq[0] = (-dx * s + dy * c) * inv;
            t.d_eq[0][0] = s * inv;
            t.d_eq[0][1] = -c * inv;
            t.d_eq[0][2] = (-dx * c - dy * s) * inv;
            t.d_eq[0][3] = -s * inv;
            t.d_eq[0][4] = c * inv;
            t
        }
        SystemKind::Unicycle2 => {
            // [x0 y0 th0 v0 w0 | x1 y1 th1 v1 w1]
            let mut t = TransitionEval::zeros(3);
            let (s, c) = x0[2].sin_cos();
            let v0 = x0[3];
            t.eq[0] = (x1[0] - x0[0]) * inv - v0 * c;
            t.d_eq[0][0] = -inv;
            t.d_eq[0][5] = inv;
            t.d_eq[0][2] = v0 * s;
            t.d_eq[0][3] = -c;
            t.eq[1] = (x1[1] - x0[1]) * inv - v0 * s;
            t.d_eq[1][1] = -inv;
            t.d_eq[1][6] = inv;
            t.d_eq[1][2] = -v0 * c;
            t.d_eq[1][3] = -s;
            t.eq[2] = wrap_angle(x1[2] - x0[2]) * inv - x0[4];
            t.d_eq[2][2] = -inv;
            t.d_eq[2][7] = inv;
            t.d_eq[2][4] = -1.0;
            t.u[0] = (x1[3] - x0[3]) * inv;
            t.d_u[0][3] = -inv;
            t.d_u[0][8] = inv;
            t.u[1] = (x1[4] - x0[4]) * inv;
            t.d_u[1][4] = -inv;
            t.d_u[1][9] = inv;
            t
        }
        SystemKind::CarWithTrailer => {
            // [x0 y0 th0 be0 | phi | x1 y1 th1 be1]
            let mut t = TransitionEval::zeros(3);
            let (l, d1) = (sys.params.wheelbase, sys.params.hitch_length);
            let (dx, dy) = (x1[0] - x0[0], x1[1] - x0[1]);
            let (s, c) = x0[2].sin_cos();
            let phi = e0[0];
            let tan = phi.tan();
            let v = (dx * c + dy * s) * inv;
            let mut dv = [0.0; MAX_LOCAL];
            dv[0] = -c * inv;
            dv[1] = -s * inv;
            dv[2] = (-dx * s + dy * c) * inv;
            dv[5] = c * inv;
            dv[6] = s * inv;
            t.u[0] = v;
            t.d_u[0] = dv;
            t.u[1] = phi;
            t.d_u[1][4] = 1.0;

            t.eq[0] = (-dx * s + dy * c) * inv;
            t.d_eq[0][0] = s * inv;
            t.d_eq[0][1] = -c * inv;
            t.d_eq[0][2] = (-dx * c - dy * s) * inv;
            t.d_eq[0][5] = -s * inv;
            t.d_eq[0][6] = c * inv;

            t.eq[1] = wrap_angle(x1[2] - x0[2]) * inv - v * tan / l;
            for (j, d) in dv.iter().enumerate() {
                t.d_eq[1][j] = -d * tan / l;
            }
            t.d_eq[1][2] -= inv;
            t.d_eq[1][7] += inv;
            t.d_eq[1][4] = -v * (1.0 + tan * tan) / l;

            let (sd, cd) = (x0[2] - x0[3]).sin_cos();
            t.eq[2] = wrap_angle(x1[3] - x0[3]) * inv - v * sd / d1;
            for (j, d) in dv.iter().enumerate() {
                t.d_eq[2][j] = -d * sd / d1;
            }
            t.d_eq[2][2] -= v * cd / d1;
            t.d_eq[2][3] += -inv + v * cd / d1;
            t.d_eq[2][8] += inv;
            t
        }
    }
}

/// Controls recovered from a state sequence and the extra variables.
pub fn recover_controls(sys: &SystemModel, layout: Layout, z: &[f64], horizon: usize) -> Vec<Control> {
    let nb = layout.block();
    (0..horizon)
        .map(|k| {
            let x0 = &z[k * nb..k * nb + layout.nx];
            let e0 = &z[k * nb + layout.nx..(k + 1) * nb];
            let x1 = &z[(k + 1) * nb..(k + 1) * nb + layout.nx];
            let t = transition(sys, x0, e0, x1);
            Control::new(&t.u[..sys.d_u])
        })
        .collect()
}

/// One scalar inequality `g(x_k) <= 0` on a single state, with its gradient.
pub struct StateConstraint {
    pub value: f64,
    pub grad: [f64; 5],
}

/// Rotational state bounds (velocities) and the hitch limit, with the given
/// inward margins.
pub fn state_bound_constraints(sys: &SystemModel, x: &[f64], hitch_margin: f64, out: &mut Vec<StateConstraint>) {
    for i in sys.d_w..sys.d_x {
        if sys.x_hi[i].is_finite() {
            let mut g = [0.0; 5];
            g[i] = 1.0;
            out.push(StateConstraint {
                value: x[i] - sys.x_hi[i],
                grad: g,
            });
        }
        if sys.x_lo[i].is_finite() {
            let mut g = [0.0; 5];
            g[i] = -1.0;
            out.push(StateConstraint {
                value: sys.x_lo[i] - x[i],
                grad: g,
            });
        }
    }
    if sys.kind == SystemKind::CarWithTrailer {
        let rel = wrap_angle(x[2] - x[3]);
        let lim = sys.params.max_hitch_angle - hitch_margin;
        let mut g = [0.0; 5];
        g[2] = 1.0;
        g[3] = -1.0;
        out.push(StateConstraint {
            value: rel - lim,
            grad: g,
        });
        let mut g = [0.0; 5];
        g[2] = -1.0;
        g[3] = 1.0;
        out.push(StateConstraint {
            value: -rel - lim,
            grad: g,
        });
    }
}

/// Number of constraints `state_bound_constraints` emits.
pub fn state_bound_count(sys: &SystemModel) -> usize {
    let mut v = Vec::new();
    state_bound_constraints(sys, &State::zeros(sys.d_x), 0.0, &mut v);
    v.len()
}

/// Workspace bounds on the translation and `margin - separation` for every
/// (body, obstacle) pair, in that order.
pub fn geometry_constraints(env: &Environment, shape: &RobotShape, x: &[f64], bound_margin: f64, collision_margin: f64, out: &mut Vec<StateConstraint>) {
    for d in 0..2 {
        let mut g = [0.0; 5];
        g[d] = 1.0;
        out.push(StateConstraint {
            value: x[d] - (env.bounds.max[d] - bound_margin),
            grad: g,
        });
        g[d] = -1.0;
        out.push(StateConstraint {
            value: (env.bounds.min[d] + bound_margin) - x[d],
            grad: g,
        });
    }
    let state = State::new(x);
    for body in &shape.bodies {
        let pose = body_pose(body, &state);
        let half = body.half_extents();
        for o in &env.obstacles {
            let (sep, gp) = sat_separation(&pose, half, o);
            let mut g = [0.0; 5];
            match body.mount {
                Mount::Base => {
                    g[0] = -gp[0];
                    g[1] = -gp[1];
                    g[2] = -gp[2];
                }
                Mount::Trailer { distance } => {
                    let (s, c) = x[3].sin_cos();
                    g[0] = -gp[0];
                    g[1] = -gp[1];
                    g[3] = -(gp[0] * distance * s - gp[1] * distance * c + gp[2]);
                }
            }
            out.push(StateConstraint {
                value: collision_margin - sep,
                grad: g,
            });
        }
    }
}
