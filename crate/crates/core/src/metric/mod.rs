//! The state metric and nearest-neighbour indices over it.
//!
//! `d(a, b) = w_t * |a^t - b^t|_2 + w_a * sum |wrap(a_i - b_i)| + w_v * |a^v - b^v|_2`
//! over the translational, angular and velocity components respectively.

mod kdtree;

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ComponentKind, State, SystemModel, MAX_STATE_DIM};
use crate::{Error, Result};

pub use kdtree::{IndexMode, NnIndex};

/// Weights of the three component groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    #[serde(default = "default_translation")]
    pub translation: f64,
    #[serde(default = "default_angle")]
    pub angle: f64,
    #[serde(default = "default_velocity")]
    pub velocity: f64,
}

fn default_translation() -> f64 {
    1.0
}
fn default_angle() -> f64 {
    0.5
}
fn default_velocity() -> f64 {
    0.25
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            translation: default_translation(),
            angle: default_angle(),
            velocity: default_velocity(),
        }
    }
}

impl MetricWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.translation, self.angle, self.velocity];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::validation(
                "metric",
                "weights must be finite, nonnegative and not all zero",
            ));
        }
        Ok(())
    }
}

/// Metric bound to the component layout of one system.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMetric {
    pub weights: MetricWeights,
    kinds: Vec<ComponentKind>,
}

impl StateMetric {
    pub fn new(weights: MetricWeights, system: &SystemModel) -> Self {
        Self {
            weights,
            kinds: system.components.clone(),
        }
    }

    pub fn for_components(weights: MetricWeights, kinds: Vec<ComponentKind>) -> Self {
        Self { weights, kinds }
    }

    pub fn components(&self) -> &[ComponentKind] {
        &self.kinds
    }

    fn weight(&self, kind: ComponentKind) -> f64 {
        match kind {
            ComponentKind::Translation => self.weights.translation,
            ComponentKind::Angle => self.weights.angle,
            ComponentKind::Velocity => self.weights.velocity,
        }
    }

    /// Distance over raw component slices laid out as `components()`.
    pub fn distance_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.kinds.len());
        debug_assert_eq!(b.len(), self.kinds.len());
        let mut trans = 0.0;
        let mut ang = 0.0;
        let mut vel = 0.0;
        for (i, kind) in self.kinds.iter().enumerate() {
            match kind {
                ComponentKind::Translation => trans += (a[i] - b[i]).powi(2),
                ComponentKind::Angle => ang += angle_gap(a[i], b[i]),
                ComponentKind::Velocity => vel += (a[i] - b[i]).powi(2),
            }
        }
        self.weights.translation * trans.sqrt() + self.weights.angle * ang + self.weights.velocity * vel.sqrt()
    }

    pub fn distance(&self, a: &State, b: &State) -> f64 {
        self.distance_slices(a, b)
    }

    /// Distance ignoring translation.
    pub fn rotational_distance(&self, a: &State, b: &State) -> f64 {
        let mut a = *a;
        let mut b = *b;
        for (i, kind) in self.kinds.iter().enumerate() {
            if *kind == ComponentKind::Translation {
                a[i] = 0.0;
                b[i] = 0.0;
            }
        }
        self.distance_slices(&a, &b)
    }

    /// Lower bound of the distance from `q` to any point of the box
    /// `[lo, hi]`. Angular box extents must lie within `(-pi, pi]`.
    pub(crate) fn lower_bound_to_box(&self, q: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let mut trans = 0.0;
        let mut ang = 0.0;
        let mut vel = 0.0;
        for (i, kind) in self.kinds.iter().enumerate() {
            match kind {
                ComponentKind::Angle => {
                    if q[i] < lo[i] || q[i] > hi[i] {
                        ang += wrap_angle(q[i] - lo[i]).abs().min(wrap_angle(q[i] - hi[i]).abs());
                    }
                }
                _ => {
                    let gap = if q[i] < lo[i] {
                        lo[i] - q[i]
                    } else if q[i] > hi[i] {
                        q[i] - hi[i]
                    } else {
                        0.0
                    };
                    if *kind == ComponentKind::Translation {
                        trans += gap * gap;
                    } else {
                        vel += gap * gap;
                    }
                }
            }
        }
        self.weight(ComponentKind::Translation) * trans.sqrt()
            + self.weight(ComponentKind::Angle) * ang
            + self.weight(ComponentKind::Velocity) * vel.sqrt()
    }

    /// The metric restricted to the non-translational components.
    pub fn rotational_part(&self) -> StateMetric {
        StateMetric {
            weights: self.weights,
            kinds: self
                .kinds
                .iter()
                .copied()
                .filter(|k| *k != ComponentKind::Translation)
                .collect(),
        }
    }
}

/// Unsigned shortest angular difference, exactly symmetric in its arguments.
#[inline]
fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// `distance(metric, system, x1, x2)`.
pub fn distance(metric: &StateMetric, system: &SystemModel, x1: &State, x2: &State) -> f64 {
    assert_eq!(x1.len(), system.d_x);
    assert_eq!(x2.len(), system.d_x);
    metric.distance(x1, x2)
}

const _: () = assert!(MAX_STATE_DIM >= 2);
