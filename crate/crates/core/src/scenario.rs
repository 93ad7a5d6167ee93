//! Scenario files: system, workspace, robot footprint, start, goal, metric.
//!
//! ```yaml
//! name: park
//! system: unicycle1
//! variant: v0
//! environment:
//!   min: [0.0, 0.0]
//!   max: [4.0, 2.0]
//!   obstacles:
//!     - {center: [1.0, 0.5], size: [0.5, 1.0]}
//! robot: {body: [0.5, 0.25]}   # optional; `trailer` too for car_with_trailer
//! start: [0.4, 1.0, 0.0]
//! goal: [3.5, 1.0, 0.0]
//! metric: {translation: 1.0, angle: 0.5, velocity: 0.25}   # optional
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{make_system, State, SystemKind, SystemModel};
use crate::geometry::{state_valid, Aabb, Body, Environment, Mount, RobotShape};
use crate::metric::{MetricWeights, StateMetric};
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    center: [f64; 2],
    size: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    min: [f64; 2],
    max: [f64; 2],
    #[serde(default)]
    obstacles: Vec<RawObstacle>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRobot {
    /// `[length, width]` of the base body.
    body: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trailer: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    system: String,
    variant: String,
    environment: RawEnvironment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    robot: Option<RawRobot>,
    start: Vec<f64>,
    goal: Vec<f64>,
    #[serde(default)]
    metric: MetricWeights,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub system: SystemModel,
    pub environment: Environment,
    pub robot: RobotShape,
    pub start: State,
    pub goal: State,
    pub weights: MetricWeights,
}

fn schema(path: &Path, field: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        field: field.into(),
        line,
        message: message.into(),
    }
}

/// Line of the first top-level `key:` in a YAML document, 1-based.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let prefix = format!("{key}:");
    text.lines().position(|l| l.starts_with(&prefix)).map(|i| i + 1)
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses YAML text; `path` only labels diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let de = serde_yaml::Deserializer::from_str(text);
        let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let line = e.inner().location().map(|l| l.line());
            let mut field = e.path().to_string();
            let msg = e.inner().to_string();
            if let Some(rest) = msg.split("missing field `").nth(1) {
                let name = rest.split('`').next().unwrap_or_default();
                field = if field == "." { name.to_string() } else { format!("{field}.{name}") };
            }
            // serde_yaml appends its own location to the message
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            schema(path, field, line, msg)
        })?;
        Self::from_raw(raw, text, path)
    }

    fn from_raw(raw: RawScenario, text: &str, path: &Path) -> Result<Self> {
        let system = make_system(&raw.system, &raw.variant)
            .map_err(|e| schema(path, "system", key_line(text, "system"), e.to_string()))?;
        raw.metric
            .validate()
            .map_err(|e| schema(path, "metric", key_line(text, "metric"), e.to_string()))?;
        let obstacles = raw
            .environment
            .obstacles
            .iter()
            .map(|o| Aabb::from_center(o.center, [0.5 * o.size[0], 0.5 * o.size[1]]))
            .collect();
        let environment = Environment::new(raw.environment.min, raw.environment.max, obstacles)
            .map_err(|e| schema(path, "environment", key_line(text, "environment"), e.to_string()))?;
        let robot = match &raw.robot {
            None => RobotShape::default_for(&system),
            Some(r) => {
                let mut bodies = vec![Body {
                    length: r.body[0],
                    width: r.body[1],
                    mount: Mount::Base,
                }];
                match (system.kind, r.trailer) {
                    (SystemKind::CarWithTrailer, Some(t)) => bodies.push(Body {
                        length: t[0],
                        width: t[1],
                        mount: Mount::Trailer {
                            distance: system.params.hitch_length,
                        },
                    }),
                    (SystemKind::CarWithTrailer, None) => {
                        return Err(schema(path, "robot.trailer", key_line(text, "robot"), "car_with_trailer needs a trailer size"))
                    }
                    (_, Some(_)) => {
                        return Err(schema(path, "robot.trailer", key_line(text, "robot"), "only car_with_trailer has a trailer"))
                    }
                    (_, None) => {}
                }
                let shape = RobotShape { bodies };
                shape
                    .validate()
                    .map_err(|e| schema(path, "robot", key_line(text, "robot"), e.to_string()))?;
                shape
            }
        };
        let mut ends = Vec::new();
        for (key, v) in [("start", &raw.start), ("goal", &raw.goal)] {
            if v.len() != system.d_x {
                return Err(schema(
                    path,
                    key,
                    key_line(text, key),
                    format!("expected {} components for {}, got {}", system.d_x, system.id(), v.len()),
                ));
            }
            let mut x = State::new(v);
            system.normalize(&mut x);
            if !state_valid(&environment, &robot, &system, &x) {
                return Err(schema(path, key, key_line(text, key), "state is not valid in this environment"));
            }
            ends.push(x);
        }
        Ok(Scenario {
            name: if raw.name.is_empty() {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            } else {
                raw.name
            },
            system,
            environment,
            robot,
            start: ends[0],
            goal: ends[1],
            weights: raw.metric,
        })
    }

    pub fn metric(&self) -> StateMetric {
        StateMetric::new(self.weights, &self.system)
    }

    pub fn to_yaml(&self) -> Result<String> {
        let bodies = &self.robot.bodies;
        let raw = RawScenario {
            name: self.name.clone(),
            system: self.system.name.clone(),
            variant: self.system.variant.clone(),
            environment: RawEnvironment {
                min: self.environment.bounds.min,
                max: self.environment.bounds.max,
                obstacles: self
                    .environment
                    .obstacles
                    .iter()
                    .map(|o| {
                        let h = o.half_extents();
                        RawObstacle {
                            center: o.center(),
                            size: [2.0 * h[0], 2.0 * h[1]],
                        }
                    })
                    .collect(),
            },
            robot: Some(RawRobot {
                body: [bodies[0].length, bodies[0].width],
                trailer: bodies.get(1).map(|b| [b.length, b.width]),
            }),
            start: self.start.to_vec(),
            goal: self.goal.to_vec(),
            metric: self.weights,
        };
        serde_yaml::to_string(&raw).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Every `*.yaml` scenario directly inside `dir`, sorted by file name.
pub fn scenario_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "yaml" || e == "yml"))
        .collect();
    out.sort();
    Ok(out)
}
