//! Trajectory optimization over a fixed horizon.
//!
//! The decision vector stacks the states (plus the steering angle for the
//! trailer); controls are recovered from consecutive states. Dynamics defects
//! are equalities, bounds and obstacle clearance are inequalities, and the
//! objective is a control-smoothness term that only selects among trajectories
//! of equal duration. Constraints are handled by an augmented Lagrangian whose
//! subproblems are solved by Levenberg–Marquardt on the banded normal
//! equations.

mod banded;
pub mod transcription;

pub use banded::BandMatrix;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State, SystemModel};
use crate::geometry::{body_pose, sat_separation, state_valid, Aabb, Environment, RobotShape};
use crate::{Error, Result};
use transcription::{geometry_constraints, recover_controls, state_bound_constraints, state_bound_count, transition, Layout, StateConstraint};

/// Acceptance thresholds shared by the optimizer and the feasibility report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Max-norm of `X[k+1] - step(X[k], U[k])`.
    pub dynamics: f64,
    /// Largest allowed control or state bound violation.
    pub bounds: f64,
    /// Max-norm of the start and goal mismatch.
    pub endpoints: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dynamics: 1e-4,
            bounds: 1e-6,
            endpoints: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptSettings {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer_iterations: usize,
    /// Inner loop stops once the merit gradient max-norm falls below this.
    pub inner_tolerance: f64,
    pub max_inner_iterations: usize,
    /// Weight of the squared control differences, normalized by control range.
    pub smoothness_weight: f64,
    /// Required clearance to obstacles, meters.
    pub collision_margin: f64,
    /// Inward margin on state bounds and the workspace.
    pub bound_margin: f64,
    /// Give up once two outer iterations shrink the violation by less than
    /// this factor.
    pub stagnation_ratio: f64,
    pub tolerances: Tolerances,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_outer_iterations: 8,
            inner_tolerance: 1e-6,
            max_inner_iterations: 60,
            smoothness_weight: 1e-2,
            collision_margin: 1e-3,
            bound_margin: 1e-6,
            stagnation_ratio: 0.5,
            tolerances: Tolerances::default(),
        }
    }
}

impl OptSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_penalty", self.initial_penalty),
            ("inner_tolerance", self.inner_tolerance),
            ("tolerances.dynamics", self.tolerances.dynamics),
            ("tolerances.bounds", self.tolerances.bounds),
            ("tolerances.endpoints", self.tolerances.endpoints),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("optimizer {name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::Config("optimizer penalty_growth must exceed 1".into()));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(Error::Config("optimizer iteration limits must be positive".into()));
        }
        if !(self.stagnation_ratio > 0.0 && self.stagnation_ratio <= 1.0) {
            return Err(Error::Config("optimizer stagnation_ratio must lie in (0, 1]".into()));
        }
        if self.smoothness_weight < 0.0 || self.collision_margin < 0.0 || self.bound_margin < 0.0 {
            return Err(Error::Config("optimizer weights and margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// A fixed-horizon problem. `guess_states` has `horizon + 1` entries and
/// `guess_controls` has `horizon`.
#[derive(Clone, Debug)]
pub struct OptProblem<'a> {
    pub system: &'a SystemModel,
    /// Absent for free-space boundary value problems.
    pub environment: Option<(&'a Environment, &'a RobotShape)>,
    pub horizon: usize,
    pub start: State,
    pub goal: State,
    pub guess_states: Vec<State>,
    pub guess_controls: Vec<Control>,
    pub settings: OptSettings,
}

/// Exact residuals of a trajectory against the full problem.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub dynamics_inf_norm: f64,
    pub bound_violation: f64,
    /// Deepest obstacle penetration or workspace exit, meters.
    pub collision_violation: f64,
    pub start_gap: f64,
    pub goal_gap: f64,
    /// Indices of states failing the exact validity check.
    pub invalid_states: Vec<usize>,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub converged: bool,
    pub residuals: FeasibilityReport,
    /// Inner iterations over all outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Constraint violation max-norm at the end of each outer iteration.
    pub violation_history: Vec<f64>,
    pub wall_time: Duration,
}

impl OptResult {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

fn max_abs_diff(system: &SystemModel, a: &State, b: &State) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    system.difference(a, b).iter().fold(0.0_f64, |m, d| m.max(d.abs()))
}

/// Residuals of `(states, controls)` against dynamics, bounds, obstacles and
/// the endpoints. Without an environment only the system's own bounds apply.
pub fn feasibility_report(
    system: &SystemModel,
    environment: Option<(&Environment, &RobotShape)>,
    states: &[State],
    controls: &[Control],
    start: &State,
    goal: &State,
    tolerances: &Tolerances,
) -> FeasibilityReport {
    assert_eq!(states.len(), controls.len() + 1, "need |X| = |U| + 1");
    let mut r = FeasibilityReport::default();
    for (k, u) in controls.iter().enumerate() {
        r.dynamics_inf_norm = r.dynamics_inf_norm.max(system.dynamics_residual(&states[k], u, &states[k + 1]));
        for i in 0..system.d_u {
            let over = (u[i] - system.u_hi[i]).max(system.u_lo[i] - u[i]).max(0.0);
            r.bound_violation = r.bound_violation.max(over);
        }
    }
    let mut bound_terms = Vec::new();
    for (k, x) in states.iter().enumerate() {
        bound_terms.clear();
        state_bound_constraints(system, x, 0.0, &mut bound_terms);
        for c in &bound_terms {
            r.bound_violation = r.bound_violation.max(c.value.max(0.0));
        }
        let valid = match environment {
            Some((env, shape)) => {
                let p = x.translation();
                for d in 0..2 {
                    let out = (env.bounds.min[d] - p[d]).max(p[d] - env.bounds.max[d]).max(0.0);
                    r.collision_violation = r.collision_violation.max(out);
                }
                for body in &shape.bodies {
                    let pose = body_pose(body, x);
                    for o in &env.obstacles {
                        let sep = sat_separation(&pose, body.half_extents(), o).0;
                        r.collision_violation = r.collision_violation.max(-sep);
                    }
                }
                state_valid(env, shape, system, x)
            }
            None => system.state_in_bounds(x),
        };
        if !valid {
            r.invalid_states.push(k);
        }
    }
    r.start_gap = max_abs_diff(system, &states[0], start);
    r.goal_gap = max_abs_diff(system, &states[states.len() - 1], goal);
    r.ok = r.dynamics_inf_norm <= tolerances.dynamics
        && r.bound_violation <= tolerances.bounds
        && r.invalid_states.is_empty()
        && r.start_gap <= tolerances.endpoints
        && r.goal_gap <= tolerances.endpoints;
    r
}

#[derive(Clone, Copy, PartialEq)]
enum Term {
    Objective,
    Equality(usize),
    Inequality(usize),
}

/// The transcribed problem in the frame where the start translation is zero.
struct Transcribed<'a> {
    sys: &'a SystemModel,
    layout: Layout,
    horizon: usize,
    env: Option<(Environment, &'a RobotShape)>,
    settings: OptSettings,
    control_range: [f64; 2],
    n_state_cons: usize,
    n_eq: usize,
    n_ineq: usize,
}

impl<'a> Transcribed<'a> {
    fn new(sys: &'a SystemModel, env: Option<(Environment, &'a RobotShape)>, horizon: usize, settings: OptSettings) -> Self {
        let layout = Layout::for_system(sys);
        let n_eq_step = transition(sys, &[0.0; 5][..sys.d_x], &[0.0; 1][..layout.ne], &[0.0; 5][..sys.d_x]).n_eq;
        let mut n_state_cons = state_bound_count(sys);
        if let Some((e, shape)) = &env {
            n_state_cons += 4 + shape.bodies.len() * e.obstacles.len();
        }
        let interior = horizon.saturating_sub(1);
        let control_range = [
            (sys.u_hi[0] - sys.u_lo[0]).max(1e-9),
            (sys.u_hi[1] - sys.u_lo[1]).max(1e-9),
        ];
        Self {
            sys,
            layout,
            horizon,
            env,
            settings,
            control_range,
            n_state_cons,
            n_eq: horizon * n_eq_step,
            n_ineq: horizon * 2 * sys.d_u + interior * n_state_cons,
        }
    }

    fn n(&self) -> usize {
        (self.horizon + 1) * self.layout.block()
    }

    fn bandwidth(&self) -> usize {
        2 * self.layout.block() + self.layout.nx - 1
    }

    fn is_fixed(&self, col: usize) -> bool {
        let nb = self.layout.block();
        col < self.layout.nx || col >= self.horizon * nb
    }

    /// Calls `f(term, value, first_column, gradient)` for every residual.
    fn visit(&self, z: &[f64], f: &mut dyn FnMut(Term, f64, usize, &[f64])) {
        let sys = self.sys;
        let (nx, nb) = (self.layout.nx, self.layout.block());
        let width = self.layout.local();
        let sw = self.settings.smoothness_weight.sqrt();
        let (mut ie, mut ii) = (0, 0);
        let mut prev: Option<transcription::TransitionEval> = None;
        let mut grad = [0.0; 2 * transcription::MAX_LOCAL];
        for k in 0..self.horizon {
            let base = k * nb;
            let t = transition(sys, &z[base..base + nx], &z[base + nx..base + nb], &z[base + nb..base + nb + nx]);
            for r in 0..t.n_eq {
                f(Term::Equality(ie), t.eq[r], base, &t.d_eq[r][..width]);
                ie += 1;
            }
            for i in 0..sys.d_u {
                f(Term::Inequality(ii), t.u[i] - sys.u_hi[i], base, &t.d_u[i][..width]);
                ii += 1;
                for (g, d) in grad.iter_mut().zip(&t.d_u[i][..width]) {
                    *g = -d;
                }
                f(Term::Inequality(ii), sys.u_lo[i] - t.u[i], base, &grad[..width]);
                ii += 1;
            }
            if let Some(p) = &prev {
                if sw > 0.0 {
                    for i in 0..sys.d_u {
                        let s = sw / self.control_range[i];
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for j in 0..width {
                            grad[j] -= s * p.d_u[i][j];
                            grad[nb + j] += s * t.d_u[i][j];
                        }
                        f(Term::Objective, s * (t.u[i] - p.u[i]), base - nb, &grad[..nb + width]);
                    }
                }
            }
            prev = Some(t);
        }
        let mut cons: Vec<StateConstraint> = Vec::with_capacity(self.n_state_cons);
        for k in 1..self.horizon {
            let base = k * nb;
            let x = &z[base..base + nx];
            cons.clear();
            state_bound_constraints(sys, x, self.settings.bound_margin, &mut cons);
            if let Some((env, shape)) = &self.env {
                let first = cons.len();
                geometry_constraints(env, shape, x, self.settings.bound_margin, self.settings.collision_margin, &mut cons);
                // Same units as the dynamics defects, so neither dominates the penalty.
                let inv_dt = 1.0 / sys.dt;
                for c in &mut cons[first..] {
                    c.value *= inv_dt;
                    c.grad.iter_mut().for_each(|g| *g *= inv_dt);
                }
            }
            for c in &cons {
                f(Term::Inequality(ii), c.value, base, &c.grad[..nx]);
                ii += 1;
            }
        }
        debug_assert_eq!(ie, self.n_eq);
        debug_assert_eq!(ii, self.n_ineq);
    }

    /// Augmented-Lagrangian merit; fills the Gauss–Newton system when asked.
    fn merit(&self, z: &[f64], mu: f64, lam_eq: &[f64], lam_in: &[f64], mut system: Option<(&mut BandMatrix, &mut [f64])>) -> f64 {
        let smu = mu.sqrt();
        let mut total = 0.0;
        let mut add = |r: f64, start: usize, grad: &[f64], scale: f64, total: &mut f64| {
            *total += 0.5 * r * r;
            if let Some((h, g)) = system.as_mut() {
                for (a, &ga) in grad.iter().enumerate() {
                    let ca = start + a;
                    if ga == 0.0 || self.is_fixed(ca) {
                        continue;
                    }
                    let ga = ga * scale;
                    g[ca] += r * ga;
                    for (b, &gb) in grad[..=a].iter().enumerate() {
                        let cb = start + b;
                        if gb == 0.0 || self.is_fixed(cb) {
                            continue;
                        }
                        h.add_lower(ca, cb, ga * gb * scale);
                    }
                }
            }
        };
        self.visit(z, &mut |term, value, start, grad| match term {
            Term::Objective => add(value, start, grad, 1.0, &mut total),
            Term::Equality(i) => add(smu * (value + lam_eq[i] / mu), start, grad, smu, &mut total),
            Term::Inequality(i) => {
                let shifted = value + lam_in[i] / mu;
                if shifted > 0.0 {
                    add(smu * shifted, start, grad, smu, &mut total);
                }
            }
        });
        total
    }

    fn constraint_values(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut eq = vec![0.0; self.n_eq];
        let mut ineq = vec![0.0; self.n_ineq];
        self.visit(z, &mut |term, value, _, _| match term {
            Term::Equality(i) => eq[i] = value,
            Term::Inequality(i) => ineq[i] = value,
            Term::Objective => {}
        });
        (eq, ineq)
    }

    /// Levenberg–Marquardt on the merit for fixed multipliers. Returns the
    /// number of accepted or attempted iterations.
    fn minimize(&self, z: &mut Vec<f64>, mu: f64, lam_eq: &[f64], lam_in: &[f64]) -> usize {
        let n = self.n();
        let mut h = BandMatrix::zeros(n, self.bandwidth().min(n.saturating_sub(1)));
        let mut g = vec![0.0; n];
        let mut damping = 1e-6;
        let mut iterations = 0;
        for _ in 0..self.settings.max_inner_iterations {
            iterations += 1;
            h.clear();
            g.iter_mut().for_each(|v| *v = 0.0);
            let m0 = self.merit(z, mu, lam_eq, lam_in, Some((&mut h, &mut g)));
            let gnorm = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            if gnorm <= self.settings.inner_tolerance {
                break;
            }
            let mut accepted = false;
            while damping <= 1e12 {
                let mut a = h.clone();
                for c in 0..n {
                    if self.is_fixed(c) {
                        a.set_lower(c, c, 1.0);
                    } else {
                        let d = a.diag(c);
                        a.add_lower(c, c, damping * d.max(1e-6) + 1e-12);
                    }
                }
                let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
                let Some(step) = a.solve(&rhs) else {
                    damping *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
                let m1 = self.merit(&trial, mu, lam_eq, lam_in, None);
                if m1.is_finite() && m1 < m0 {
                    let small = m0 - m1 <= 1e-15 * (1.0 + m0);
                    *z = trial;
                    damping = (damping * 0.2).max(1e-12);
                    accepted = !small;
                    break;
                }
                damping *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        iterations
    }
}

/// Time-scales a guess to `horizon` steps, interpolating angles along the short arc.
pub fn resample(system: &SystemModel, states: &[State], controls: &[Control], horizon: usize) -> (Vec<State>, Vec<Control>) {
    let src = controls.len();
    if src == 0 {
        let zero = clamp_control(system, &Control::zeros(system.d_u));
        return (vec![states[0]; horizon + 1], vec![zero; horizon]);
    }
    let xs = (0..=horizon)
        .map(|k| {
            let s = k as f64 * src as f64 / horizon as f64;
            let i = (s.floor() as usize).min(src - 1);
            let frac = s - i as f64;
            let d = system.difference(&states[i + 1], &states[i]);
            let mut x = states[i];
            for c in 0..system.d_x {
                x[c] += frac * d[c];
            }
            system.normalize(&mut x);
            x
        })
        .collect();
    let us = (0..horizon)
        .map(|k| controls[((k * src) / horizon).min(src - 1)])
        .collect();
    (xs, us)
}

fn clamp_control(system: &SystemModel, u: &Control) -> Control {
    let mut out = *u;
    for i in 0..system.d_u {
        out[i] = out[i].clamp(system.u_lo[i], system.u_hi[i]);
    }
    out
}

/// Solves one fixed-horizon problem. Never fails: non-convergence is reported
/// through `converged` and the residuals.
pub fn optimize_fixed_t(problem: &OptProblem) -> OptResult {
    let started = Instant::now();
    let sys = problem.system;
    let horizon = problem.horizon;
    assert!(horizon >= 1, "horizon must be positive");
    assert_eq!(problem.guess_states.len(), horizon + 1, "guess length must be horizon + 1");
    assert_eq!(problem.guess_controls.len(), horizon, "guess controls must have horizon entries");
    let tol = &problem.settings.tolerances;
    let env_ref = problem.environment;

    let report_for = |states: &[State], controls: &[Control]| {
        feasibility_report(sys, env_ref, states, controls, &problem.start, &problem.goal, tol)
    };
    let guess_report = report_for(&problem.guess_states, &problem.guess_controls);
    if guess_report.ok {
        return OptResult {
            states: problem.guess_states.clone(),
            controls: problem.guess_controls.clone(),
            converged: true,
            residuals: guess_report,
            iterations: 0,
            outer_iterations: 0,
            violation_history: Vec::new(),
            wall_time: started.elapsed(),
        };
    }

    let (a, b) = (problem.start.translation(), problem.goal.translation());
    let reach = horizon as f64 * sys.dt * sys.max_speed();
    if (a[0] - b[0]).hypot(a[1] - b[1]) > reach + tol.endpoints {
        // Not even a straight run at top speed covers the distance.
        return OptResult {
            states: problem.guess_states.clone(),
            controls: problem.guess_controls.clone(),
            converged: false,
            residuals: guess_report,
            iterations: 0,
            outer_iterations: 0,
            violation_history: Vec::new(),
            wall_time: started.elapsed(),
        };
    }

    // Work relative to the start translation so results are translation equivariant.
    let origin = problem.start.translation();
    let shift = |x: &State, sign: f64| x.translated([sign * origin[0], sign * origin[1]]);
    let local_env = env_ref.map(|(e, shape)| {
        let offset = [-origin[0], -origin[1]];
        let env = Environment {
            bounds: e.bounds.translated(offset),
            obstacles: e.obstacles.iter().map(|o: &Aabb| o.translated(offset)).collect(),
        };
        (env, shape)
    });
    let tr = Transcribed::new(sys, local_env, horizon, problem.settings);
    let (nx, nb) = (tr.layout.nx, tr.layout.block());

    let mut z = vec![0.0; tr.n()];
    for k in 0..=horizon {
        let x = match k {
            0 => shift(&problem.start, -1.0),
            _ if k == horizon => shift(&problem.goal, -1.0),
            _ => shift(&problem.guess_states[k], -1.0),
        };
        z[k * nb..k * nb + nx].copy_from_slice(&x);
        if tr.layout.ne == 1 && k < horizon {
            z[k * nb + nx] = clamp_control(sys, &problem.guess_controls[k])[1];
        }
    }

    let extract = |z: &[f64]| -> (Vec<State>, Vec<Control>) {
        let mut states: Vec<State> = (0..=horizon)
            .map(|k| {
                let mut x = shift(&State::new(&z[k * nb..k * nb + nx]), 1.0);
                sys.normalize(&mut x);
                x
            })
            .collect();
        states[0] = problem.start;
        sys.normalize(&mut states[0]);
        states[horizon] = problem.goal;
        sys.normalize(&mut states[horizon]);
        let controls = recover_controls(sys, tr.layout, z, horizon)
            .iter()
            .map(|u| clamp_control(sys, u))
            .collect();
        (states, controls)
    };

    let mut mu = problem.settings.initial_penalty;
    let mut lam_eq = vec![0.0; tr.n_eq];
    let mut lam_in = vec![0.0; tr.n_ineq];
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut outer = 0;
    let (mut states, mut controls) = extract(&z);
    let mut report = guess_report;
    for _ in 0..problem.settings.max_outer_iterations {
        outer += 1;
        let previous = z.clone();
        iterations += tr.minimize(&mut z, mu, &lam_eq, &lam_in);
        let (eq, ineq) = tr.constraint_values(&z);
        let violation = eq
            .iter()
            .map(|v| v.abs())
            .chain(ineq.iter().map(|v| v.max(0.0)))
            .fold(0.0_f64, f64::max);
        // Safeguard: an outer step that increases the violation is undone
        // and retried with a stiffer penalty.
        if history.last().is_some_and(|&v| violation > v) {
            z = previous;
            mu *= problem.settings.penalty_growth;
            continue;
        }
        history.push(violation);
        (states, controls) = extract(&z);
        report = report_for(&states, &controls);
        if report.ok {
            break;
        }
        let n = history.len();
        if n >= 3 && history[n - 1] > problem.settings.stagnation_ratio * history[n - 3] {
            break;
        }
        for (l, h) in lam_eq.iter_mut().zip(&eq) {
            *l += mu * h;
        }
        for (l, g) in lam_in.iter_mut().zip(&ineq) {
            *l = (*l + mu * g).max(0.0);
        }
        mu *= problem.settings.penalty_growth;
    }
    OptResult {
        states,
        controls,
        converged: report.ok,
        residuals: report,
        iterations,
        outer_iterations: outer,
        violation_history: history,
        wall_time: started.elapsed(),
    }
}

/// Horizons tried around `t_d`: `round(0.8 t_d)`, `t_d`, `round(1.2 t_d)`,
/// deduplicated, ascending, at least 1.
pub fn candidate_horizons(t_d: usize) -> Vec<usize> {
    let mut hs: Vec<usize> = [0.8, 1.0, 1.2]
        .iter()
        .map(|f| ((f * t_d as f64).round() as usize).max(1))
        .collect();
    hs.dedup();
    hs
}

#[derive(Clone, Debug)]
pub struct TimeSearchResult {
    /// Every optimization that ran, in ascending horizon order.
    pub attempts: Vec<OptResult>,
    /// Index into `attempts` of the converged result with the smallest horizon.
    pub best: Option<usize>,
}

impl TimeSearchResult {
    pub fn best(&self) -> Option<&OptResult> {
        self.best.map(|i| &self.attempts[i])
    }

    /// The result to harvest primitives from: the best one, else the last attempt.
    pub fn final_iterate(&self) -> Option<&OptResult> {
        self.best().or(self.attempts.last())
    }
}

/// Repairs a guess of `t_d` steps by trying the candidate horizons in
/// ascending order and keeping the first that converges. Horizons whose
/// duration is not below `max_cost` are skipped.
pub fn optimize_with_time_search(
    system: &SystemModel,
    environment: Option<(&Environment, &RobotShape)>,
    start: &State,
    goal: &State,
    guess_states: &[State],
    guess_controls: &[Control],
    settings: &OptSettings,
    max_cost: Option<f64>,
) -> TimeSearchResult {
    assert_eq!(guess_states.len(), guess_controls.len() + 1, "need |X| = |U| + 1");
    let mut out = TimeSearchResult {
        attempts: Vec::new(),
        best: None,
    };
    for horizon in candidate_horizons(guess_controls.len()) {
        if let Some(c) = max_cost {
            if horizon as f64 * system.dt >= c {
                continue;
            }
        }
        let (xs, us) = resample(system, guess_states, guess_controls, horizon);
        let problem = OptProblem {
            system,
            environment,
            horizon,
            start: *start,
            goal: *goal,
            guess_states: xs,
            guess_controls: us,
            settings: *settings,
        };
        let result = optimize_fixed_t(&problem);
        let ok = result.converged;
        out.attempts.push(result);
        if ok {
            out.best = Some(out.attempts.len() - 1);
            break;
        }
    }
    out
}

/// Shortest horizon accepted by [`solve_bvp`].
pub const MIN_BVP_HORIZON: usize = 5;

#[derive(Clone, Debug)]
pub struct BvpSolution {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub horizon: usize,
}

/// Initial guess for a boundary value problem, resampled to each horizon tried.
#[derive(Clone, Copy, Debug)]
pub struct BvpGuess<'a> {
    pub states: &'a [State],
    pub controls: &'a [Control],
}

fn bvp_attempt(system: &SystemModel, start: &State, goal: &State, horizon: usize, settings: &OptSettings, guess: Option<BvpGuess>) -> OptResult {
    let (xs, us) = match guess {
        Some(g) => resample(system, g.states, g.controls, horizon),
        None => resample(system, &[*start, *goal], &[Control::zeros(system.d_u)], horizon),
    };
    let problem = OptProblem {
        system,
        environment: None,
        horizon,
        start: *start,
        goal: *goal,
        guess_states: xs,
        guess_controls: us,
        settings: *settings,
    };
    optimize_fixed_t(&problem)
}

/// Free-space two-point boundary value problem with an approximately minimal
/// horizon: exponential search for a feasible horizon, then bisection between
/// the last failure and the first success. The initial guess interpolates
/// between the endpoints.
pub fn solve_bvp(system: &SystemModel, start: &State, goal: &State, max_horizon: usize, settings: &OptSettings) -> Option<BvpSolution> {
    solve_bvp_with_guess(system, start, goal, max_horizon, settings, None)
}

/// [`solve_bvp`] seeded with a trajectory that is time-scaled to every horizon tried.
pub fn solve_bvp_with_guess(
    system: &SystemModel,
    start: &State,
    goal: &State,
    max_horizon: usize,
    settings: &OptSettings,
    guess: Option<BvpGuess>,
) -> Option<BvpSolution> {
    if max_horizon < MIN_BVP_HORIZON {
        return None;
    }
    let mut failed = MIN_BVP_HORIZON - 1;
    let mut horizon = MIN_BVP_HORIZON;
    let mut found: Option<(usize, OptResult)> = None;
    loop {
        let r = bvp_attempt(system, start, goal, horizon, settings, guess);
        if r.converged {
            found = Some((horizon, r));
            break;
        }
        failed = horizon;
        if horizon >= max_horizon {
            break;
        }
        horizon = if horizon < 8 { 8 } else { horizon * 2 }.min(max_horizon);
    }
    let (mut ok_h, mut best) = found?;
    while ok_h - failed > 1 {
        let mid = (failed + ok_h) / 2;
        let r = bvp_attempt(system, start, goal, mid, settings, guess);
        if r.converged {
            ok_h = mid;
            best = r;
        } else {
            failed = mid;
        }
    }
    Some(BvpSolution {
        states: best.states,
        controls: best.controls,
        horizon: ok_h,
    })
}

#[cfg(test)]
mod tests;
