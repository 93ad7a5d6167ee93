//! Translation-invariant dynamical systems with explicit Euler integration.
//!
//! Every system stores the workspace translation in the first two state
//! components; the continuous dynamics never read them, so any trajectory can
//! be shifted freely in the plane.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};
use std::fmt;
use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

pub const MAX_STATE_DIM: usize = 5;
pub const MAX_CONTROL_DIM: usize = 2;
/// Workspace dimension. Only planar systems are supported.
pub const WORKSPACE_DIM: usize = 2;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

macro_rules! fixed_vector {
    ($(#[$meta:meta])* $name:ident, $cap:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq)]
        pub struct $name {
            data: [f64; $cap],
            len: u8,
        }

        impl $name {
            pub const CAPACITY: usize = $cap;

            /// Panics if `values` exceeds the capacity.
            pub fn new(values: &[f64]) -> Self {
                assert!(
                    values.len() <= $cap,
                    concat!(stringify!($name), " holds at most {} values, got {}"),
                    $cap,
                    values.len()
                );
                let mut data = [0.0; $cap];
                data[..values.len()].copy_from_slice(values);
                Self {
                    data,
                    len: values.len() as u8,
                }
            }

            pub fn zeros(len: usize) -> Self {
                assert!(len <= $cap);
                Self {
                    data: [0.0; $cap],
                    len: len as u8,
                }
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.data[..self.len as usize]
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.data[..self.len as usize]
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                self.as_slice()
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                self.as_mut_slice()
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_list().entries(self.as_slice()).finish()
            }
        }

        impl From<&[f64]> for $name {
            fn from(values: &[f64]) -> Self {
                Self::new(values)
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(values: [f64; N]) -> Self {
                Self::new(&values)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                self.as_slice().serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let v = Vec::<f64>::deserialize(d)?;
                if v.len() > $cap {
                    return Err(serde::de::Error::invalid_length(
                        v.len(),
                        &concat!("at most ", stringify!($cap), " values"),
                    ));
                }
                Ok(Self::new(&v))
            }
        }
    };
}

fixed_vector!(
    /// A robot state `[x^t, x^r]`; angular components live in `(-pi, pi]`.
    State,
    MAX_STATE_DIM
);
fixed_vector!(
    /// A control input held constant over one timestep.
    Control,
    MAX_CONTROL_DIM
);

impl State {
    /// Workspace translation.
    pub fn translation(&self) -> [f64; WORKSPACE_DIM] {
        [self.data[0], self.data[1]]
    }

    /// Returns `self ⊕ offset`: the state shifted by a workspace translation.
    pub fn translated(&self, offset: [f64; WORKSPACE_DIM]) -> State {
        let mut out = *self;
        out.data[0] += offset[0];
        out.data[1] += offset[1];
        out
    }
}

/// How a state component enters the metric and the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Translation,
    Angle,
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    /// `[x, y, theta]`, controls `[v, omega]`.
    Unicycle1,
    /// `[x, y, theta, v, omega]`, controls `[v_dot, omega_dot]`.
    Unicycle2,
    /// `[x, y, theta0, theta1]`, controls `[v, phi]`.
    CarWithTrailer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    /// Car wheelbase `L`.
    pub wheelbase: f64,
    /// Hitch length `d1` between car and trailer axle.
    pub hitch_length: f64,
    /// Open bound on `|theta0 - theta1|`.
    pub max_hitch_angle: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.25,
            hitch_length: 0.5,
            max_hitch_angle: FRAC_PI_4,
        }
    }
}

/// An immutable, translation-invariant system description.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub name: String,
    pub variant: String,
    pub kind: SystemKind,
    pub d_x: usize,
    pub d_u: usize,
    pub d_w: usize,
    pub components: Vec<ComponentKind>,
    pub u_lo: Control,
    pub u_hi: Control,
    /// Bounds on non-translational components; infinite where unbounded.
    pub x_lo: State,
    pub x_hi: State,
    pub dt: f64,
    pub params: SystemParams,
}

/// Builds one of the supported systems by `(name, variant)`.
pub fn make_system(name: &str, variant: &str) -> Result<SystemModel> {
    let inf = f64::INFINITY;
    let (kind, u_lo, u_hi, x_lo, x_hi) = match (name, variant) {
        ("unicycle1", "v0") => (
            SystemKind::Unicycle1,
            vec![-0.5, -0.5],
            vec![0.5, 0.5],
            vec![-inf; 3],
            vec![inf; 3],
        ),
        ("unicycle1", "v1") => (
            SystemKind::Unicycle1,
            vec![0.25, -0.5],
            vec![0.5, 0.5],
            vec![-inf; 3],
            vec![inf; 3],
        ),
        ("unicycle1", "v2") => (
            SystemKind::Unicycle1,
            vec![0.25, -0.25],
            vec![0.5, 0.5],
            vec![-inf; 3],
            vec![inf; 3],
        ),
        ("unicycle2", "v0") => (
            SystemKind::Unicycle2,
            vec![-0.25, -0.25],
            vec![0.25, 0.25],
            vec![-inf, -inf, -inf, -0.5, -0.5],
            vec![inf, inf, inf, 0.5, 0.5],
        ),
        ("car_with_trailer", "v0") => (
            SystemKind::CarWithTrailer,
            vec![-0.1, -FRAC_PI_3],
            vec![0.5, FRAC_PI_3],
            vec![-inf; 4],
            vec![inf; 4],
        ),
        ("unicycle1" | "unicycle2" | "car_with_trailer", _) => {
            return Err(Error::Config(format!(
                "unknown variant {variant:?} for system {name:?}"
            )))
        }
        _ => return Err(Error::Config(format!("unknown system {name:?}"))),
    };
    use ComponentKind::*;
    let components = match kind {
        SystemKind::Unicycle1 => vec![Translation, Translation, Angle],
        SystemKind::Unicycle2 => vec![Translation, Translation, Angle, Velocity, Velocity],
        SystemKind::CarWithTrailer => vec![Translation, Translation, Angle, Angle],
    };
    Ok(SystemModel {
        name: name.to_string(),
        variant: variant.to_string(),
        kind,
        d_x: components.len(),
        d_u: 2,
        d_w: WORKSPACE_DIM,
        components,
        u_lo: Control::new(&u_lo),
        u_hi: Control::new(&u_hi),
        x_lo: State::new(&x_lo),
        x_hi: State::new(&x_hi),
        dt: 0.1,
        params: SystemParams::default(),
    })
}

impl SystemModel {
    /// `name/variant`, e.g. `unicycle1/v2`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.name, self.variant)
    }

    pub fn is_angle(&self, i: usize) -> bool {
        self.components[i] == ComponentKind::Angle
    }

    /// Upper bound on the translational speed `|d x^t / dt|`.
    pub fn max_speed(&self) -> f64 {
        match self.kind {
            SystemKind::Unicycle1 | SystemKind::CarWithTrailer => {
                self.u_lo[0].abs().max(self.u_hi[0].abs())
            }
            SystemKind::Unicycle2 => self.x_lo[3].abs().max(self.x_hi[3].abs()),
        }
    }

    /// Wraps every angular component in place.
    pub fn normalize(&self, x: &mut State) {
        for (i, kind) in self.components.iter().enumerate() {
            if *kind == ComponentKind::Angle {
                x[i] = wrap_angle(x[i]);
            }
        }
    }

    /// Componentwise `a - b`, with angular differences wrapped.
    pub fn difference(&self, a: &State, b: &State) -> State {
        let mut d = State::zeros(self.d_x);
        for i in 0..self.d_x {
            d[i] = if self.is_angle(i) {
                wrap_angle(a[i] - b[i])
            } else {
                a[i] - b[i]
            };
        }
        d
    }

    fn check_dims(&self, x: &State, u: &Control) {
        assert_eq!(x.len(), self.d_x, "state dimension mismatch for {}", self.id());
        assert_eq!(u.len(), self.d_u, "control dimension mismatch for {}", self.id());
    }

    /// Continuous dynamics `f(x^r, u)`.
    pub fn derivative(&self, x: &State, u: &Control) -> State {
        self.check_dims(x, u);
        match self.kind {
            SystemKind::Unicycle1 => {
                let (v, w, th) = (u[0], u[1], x[2]);
                State::new(&[v * th.cos(), v * th.sin(), w])
            }
            SystemKind::Unicycle2 => {
                let (th, v, w) = (x[2], x[3], x[4]);
                State::new(&[v * th.cos(), v * th.sin(), w, u[0], u[1]])
            }
            SystemKind::CarWithTrailer => {
                let (v, phi, th0, th1) = (u[0], u[1], x[2], x[3]);
                let p = &self.params;
                State::new(&[
                    v * th0.cos(),
                    v * th0.sin(),
                    v / p.wheelbase * phi.tan(),
                    v / p.hitch_length * (th0 - th1).sin(),
                ])
            }
        }
    }

    /// One Euler step `x + f(x^r, u) dt`, angles renormalized.
    ///
    /// Panics if `x` or `u` is not dimensioned for this system.
    pub fn step(&self, x: &State, u: &Control) -> State {
        let f = self.derivative(x, u);
        let mut out = *x;
        for i in 0..self.d_x {
            out[i] += f[i] * self.dt;
        }
        self.normalize(&mut out);
        out
    }

    /// Analytic Jacobians `(d step / d x, d step / d u)`.
    pub fn step_jacobians(&self, x: &State, u: &Control) -> (DMatrix<f64>, DMatrix<f64>) {
        self.check_dims(x, u);
        let dt = self.dt;
        let mut a = DMatrix::<f64>::identity(self.d_x, self.d_x);
        let mut b = DMatrix::<f64>::zeros(self.d_x, self.d_u);
        match self.kind {
            SystemKind::Unicycle1 => {
                let (v, th) = (u[0], x[2]);
                let (s, c) = th.sin_cos();
                a[(0, 2)] = -v * s * dt;
                a[(1, 2)] = v * c * dt;
                b[(0, 0)] = c * dt;
                b[(1, 0)] = s * dt;
                b[(2, 1)] = dt;
            }
            SystemKind::Unicycle2 => {
                let (th, v) = (x[2], x[3]);
                let (s, c) = th.sin_cos();
                a[(0, 2)] = -v * s * dt;
                a[(0, 3)] = c * dt;
                a[(1, 2)] = v * c * dt;
                a[(1, 3)] = s * dt;
                a[(2, 4)] = dt;
                b[(3, 0)] = dt;
                b[(4, 1)] = dt;
            }
            SystemKind::CarWithTrailer => {
                let (v, phi, th0, th1) = (u[0], u[1], x[2], x[3]);
                let p = &self.params;
                let (s0, c0) = th0.sin_cos();
                let (sd, cd) = (th0 - th1).sin_cos();
                let tan = phi.tan();
                a[(0, 2)] = -v * s0 * dt;
                a[(1, 2)] = v * c0 * dt;
                a[(3, 2)] = v / p.hitch_length * cd * dt;
                a[(3, 3)] = 1.0 - v / p.hitch_length * cd * dt;
                b[(0, 0)] = c0 * dt;
                b[(1, 0)] = s0 * dt;
                b[(2, 0)] = tan / p.wheelbase * dt;
                b[(2, 1)] = v / p.wheelbase * (1.0 + tan * tan) * dt;
                b[(3, 0)] = sd / p.hitch_length * dt;
            }
        }
        (a, b)
    }

    /// `X[0] = x0`, `X[k+1] = step(X[k], U[k])`.
    pub fn rollout(&self, x0: &State, controls: &[Control]) -> Vec<State> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut x = *x0;
        self.normalize(&mut x);
        states.push(x);
        for u in controls {
            x = self.step(&x, u);
            states.push(x);
        }
        states
    }

    /// Closed-interval control bounds.
    pub fn control_in_bounds(&self, u: &Control) -> bool {
        u.len() == self.d_u && (0..self.d_u).all(|i| u[i] >= self.u_lo[i] && u[i] <= self.u_hi[i])
    }

    pub fn controls_in_bounds(&self, controls: &[Control]) -> bool {
        controls.iter().all(|u| self.control_in_bounds(u))
    }

    /// Bounds on the non-translational components, plus the hitch-angle
    /// constraint for the trailer. Translation is left to the geometry checks.
    pub fn state_in_bounds(&self, x: &State) -> bool {
        if x.len() != self.d_x {
            return false;
        }
        let within = (self.d_w..self.d_x).all(|i| x[i] >= self.x_lo[i] && x[i] <= self.x_hi[i]);
        within && self.hitch_ok(x)
    }

    fn hitch_ok(&self, x: &State) -> bool {
        match self.kind {
            SystemKind::CarWithTrailer => {
                wrap_angle(x[2] - x[3]).abs() < self.params.max_hitch_angle
            }
            _ => true,
        }
    }

    /// Max-norm of `x_next - step(x, u)` with wrapped angles.
    pub fn dynamics_residual(&self, x: &State, u: &Control, x_next: &State) -> f64 {
        let pred = self.step(x, u);
        self.difference(x_next, &pred)
            .iter()
            .fold(0.0_f64, |m, d| m.max(d.abs()))
    }
}
