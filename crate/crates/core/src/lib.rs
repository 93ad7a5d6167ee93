//! Kinodynamic motion planning for translation-invariant mobile robots.
//!
//! The planner interleaves a discontinuity-bounded A* search over reusable
//! motion primitives with trajectory optimization that repairs the stitched
//! result into a dynamically feasible, time-optimal trajectory. Each outer
//! iteration grows the primitive set, shrinks the allowed discontinuity, and
//! harvests new primitives from the optimizer output.
//!
//! Module map:
//!
//! * [`dynamics`]: system models, Euler step, Jacobians, bounds.
//! * [`geometry`]: workspace, box obstacles, robot footprints, collision checks.
//! * [`metric`]: the state metric and radius/k-nearest indices.
//! * [`primitives`]: motion primitives, generation, dispersion ordering, library files.
//! * [`dbastar`]: the discontinuity-bounded search and its feasibility oracle.
//! * [`trajopt`]: augmented-Lagrangian trajectory optimization and time-horizon search.
//! * [`planner`]: the anytime outer loop.
//! * [`scenario`], [`trajectory`], [`bench`]: file formats and the benchmark harness.

pub mod bench;
pub mod dbastar;
pub mod dynamics;
mod error;
pub mod geometry;
pub mod metric;
pub mod planner;
pub mod primitives;
pub mod scenario;
pub mod trajectory;
pub mod trajopt;

pub use error::{Error, Result};
