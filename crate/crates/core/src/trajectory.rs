//! Trajectory files: YAML or JSON, chosen by extension.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{make_system, Control, State, SystemModel};
use crate::trajopt::FeasibilityReport;
use crate::{Error, Result};

pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub version: u32,
    pub system: String,
    pub variant: String,
    pub dt: f64,
    /// Duration in seconds.
    pub cost: f64,
    pub states: Vec<State>,
    pub actions: Vec<Control>,
    /// Discontinuity bound the trajectory was searched with, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<FeasibilityReport>,
}

enum Format {
    Yaml,
    Json,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("yaml" | "yml") => Ok(Format::Yaml),
        Some("json") => Ok(Format::Json),
        _ => Err(Error::Config(format!(
            "{}: trajectory files must end in .yaml, .yml or .json",
            path.display()
        ))),
    }
}

impl Trajectory {
    pub fn new(system: &SystemModel, states: Vec<State>, actions: Vec<Control>) -> Self {
        Self {
            version: TRAJECTORY_VERSION,
            system: system.name.clone(),
            variant: system.variant.clone(),
            dt: system.dt,
            cost: actions.len() as f64 * system.dt,
            states,
            actions,
            delta: None,
            residuals: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn model(&self) -> Result<SystemModel> {
        make_system(&self.system, &self.variant)
    }

    /// Shape checks against the named system.
    pub fn validate(&self) -> Result<SystemModel> {
        let sys = self.model()?;
        let bad = |m: String| Error::validation("trajectory", m);
        if self.version != TRAJECTORY_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        if self.states.len() != self.actions.len() + 1 {
            return Err(bad(format!(
                "{} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(k) = self.states.iter().position(|x| x.len() != sys.d_x) {
            return Err(bad(format!("state {k} has {} components, expected {}", self.states[k].len(), sys.d_x)));
        }
        if let Some(k) = self.actions.iter().position(|u| u.len() != sys.d_u) {
            return Err(bad(format!("action {k} has {} components, expected {}", self.actions[k].len(), sys.d_u)));
        }
        Ok(sys)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = match format_of(path)? {
            Format::Yaml => serde_yaml::to_string(self).map_err(|e| Error::Format(e.to_string()))?,
            Format::Json => serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?,
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema = |field: String, line: Option<usize>, message: String| Error::Schema {
            path: path.to_path_buf(),
            field,
            line,
            message,
        };
        let t: Trajectory = match format_of(path)? {
            Format::Yaml => serde_path_to_error::deserialize(serde_yaml::Deserializer::from_str(&text)).map_err(|e| {
                let line = e.inner().location().map(|l| l.line());
                schema(e.path().to_string(), line, e.inner().to_string())
            })?,
            Format::Json => serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text)).map_err(|e| {
                let line = Some(e.inner().line());
                schema(e.path().to_string(), line, e.inner().to_string())
            })?,
        };
        t.validate()?;
        Ok(t)
    }
}
