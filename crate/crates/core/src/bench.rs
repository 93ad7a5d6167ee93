//! Benchmark trials and their result files.
//!
//! One CSV row per (scenario, trial) plus a JSON sidecar holding each trial's
//! raw solution timeline. Every summary number is recomputable from the
//! timelines alone.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::planner::{plan, PlannerConfig, RunTrace};
use crate::primitives::PrimitiveLibrary;
use crate::scenario::Scenario;
use crate::{Error, Result};

/// Seed of one trial; depends on nothing else.
pub fn trial_seed(master: u64, scenario: &str, trial: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((scenario.len() as u64).to_le_bytes());
    h.update(scenario.as_bytes());
    h.update((trial as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Raw outcome of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub system: String,
    pub trial: usize,
    pub seed: u64,
    /// `(seconds since start, cost)` of every reported solution.
    pub timeline: Vec<(f64, f64)>,
    /// Delta per iteration.
    pub deltas: Vec<f64>,
    /// Primitive count per iteration.
    pub primitives: Vec<usize>,
    /// Set when the trial crashed or could not start.
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn success(&self) -> bool {
        !self.timeline.is_empty()
    }

    pub fn t_first(&self) -> Option<f64> {
        self.timeline.first().map(|p| p.0)
    }

    pub fn j_first(&self) -> Option<f64> {
        self.timeline.first().map(|p| p.1)
    }

    pub fn j_final(&self) -> Option<f64> {
        self.timeline.last().map(|p| p.1)
    }

    /// Non-increasing delta and non-decreasing primitive count.
    pub fn delta_monotone(&self) -> bool {
        self.deltas.windows(2).all(|w| w[1] <= w[0]) && self.primitives.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn costs_decreasing(&self) -> bool {
        self.timeline.windows(2).all(|w| w[1].1 < w[0].1)
    }

    fn from_trace(trace: &RunTrace, trial: usize, timeline: Vec<(f64, f64)>) -> Self {
        Self {
            scenario: trace.scenario.clone(),
            system: trace.system.clone(),
            trial,
            seed: trace.seed,
            timeline,
            deltas: trace.iterations.iter().map(|r| r.delta).collect(),
            primitives: trace.iterations.iter().map(|r| r.primitives).collect(),
            error: None,
        }
    }

    fn failed(scenario: &Scenario, trial: usize, seed: u64, error: String) -> Self {
        Self {
            scenario: scenario.name.clone(),
            system: scenario.system.id(),
            trial,
            seed,
            timeline: Vec::new(),
            deltas: Vec::new(),
            primitives: Vec::new(),
            error: Some(error),
        }
    }

    pub fn to_row(&self) -> ResultRow {
        ResultRow {
            scenario: self.scenario.clone(),
            system: self.system.clone(),
            trial: self.trial,
            seed: self.seed,
            success: self.success(),
            t_first: self.t_first(),
            j_first: self.j_first(),
            j_final: self.j_final(),
            solutions: self.timeline.len(),
            iterations: self.deltas.len(),
            delta_monotone: self.delta_monotone(),
            error: self.error.clone().unwrap_or_default(),
        }
    }
}

/// One CSV line. Absent values are empty cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub system: String,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub t_first: Option<f64>,
    pub j_first: Option<f64>,
    pub j_final: Option<f64>,
    pub solutions: usize,
    pub iterations: usize,
    pub delta_monotone: bool,
    pub error: String,
}

/// Runs one trial. Errors and panics become a failed record.
pub fn run_trial(scenario: &Scenario, library: &PrimitiveLibrary, config: &PlannerConfig, master_seed: u64, trial: usize) -> TrialRecord {
    let seed = trial_seed(master_seed, &scenario.name, trial);
    let mut config = config.clone();
    config.seed = seed;
    let outcome = catch_unwind(AssertUnwindSafe(|| plan(scenario, library, &config, |_| {})));
    match outcome {
        Ok(Ok(out)) => {
            let timeline = out.solutions.iter().map(|s| (s.found_at, s.cost)).collect();
            TrialRecord::from_trace(&out.trace, trial, timeline)
        }
        Ok(Err(e)) => TrialRecord::failed(scenario, trial, seed, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".to_string());
            TrialRecord::failed(scenario, trial, seed, format!("crashed: {msg}"))
        }
    }
}

/// Runs every trial in this process, in order.
pub fn run_benchmark(cases: &[(Scenario, PrimitiveLibrary)], config: &PlannerConfig, trials: usize, master_seed: u64) -> Result<Vec<TrialRecord>> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(cases.len() * trials);
    for (scenario, library) in cases {
        for trial in 0..trials {
            out.push(run_trial(scenario, library, config, master_seed, trial));
        }
    }
    Ok(out)
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Table row for one scenario. Medians run over successful trials only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub system: String,
    pub trials: usize,
    pub success_rate: f64,
    pub t_first: Option<f64>,
    pub j_first: Option<f64>,
    pub j_final: Option<f64>,
}

/// Groups by scenario in first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Vec<Summary> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.scenario.as_str()) {
            names.push(&r.scenario);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&TrialRecord> = records.iter().filter(|r| r.scenario == name).collect();
            let ok: Vec<&&TrialRecord> = group.iter().filter(|r| r.success()).collect();
            let pick = |f: fn(&TrialRecord) -> Option<f64>| median(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            Summary {
                scenario: name.to_string(),
                system: group[0].system.clone(),
                trials: group.len(),
                success_rate: ok.len() as f64 / group.len() as f64,
                t_first: pick(TrialRecord::t_first),
                j_first: pick(TrialRecord::j_first),
                j_final: pick(TrialRecord::j_final),
            }
        })
        .collect()
}

pub fn write_csv(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r.to_row()).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Versioned JSON sidecar holding the raw trial records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineFile {
    pub version: u32,
    pub trials: Vec<TrialRecord>,
}

pub const TIMELINE_VERSION: u32 = 1;

pub fn write_timelines(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = TimelineFile {
        version: TIMELINE_VERSION,
        trials: records.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_timelines(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TimelineFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        field: String::new(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    if file.version != TIMELINE_VERSION {
        return Err(Error::Format(format!("unsupported timeline version {}", file.version)));
    }
    Ok(file.trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scenario: &str, trial: usize, timeline: Vec<(f64, f64)>) -> TrialRecord {
        TrialRecord {
            scenario: scenario.into(),
            system: "unicycle1/v0".into(),
            trial,
            seed: trial_seed(1, scenario, trial),
            timeline,
            deltas: vec![0.5, 0.4, 0.4],
            primitives: vec![100, 300, 700],
            error: None,
        }
    }

    #[test]
    fn seeds_depend_on_every_input() {
        let s = trial_seed(3, "park", 2);
        assert_eq!(s, trial_seed(3, "park", 2));
        assert_ne!(s, trial_seed(4, "park", 2));
        assert_ne!(s, trial_seed(3, "kink", 2));
        assert_ne!(s, trial_seed(3, "park", 3));
    }

    #[test]
    fn median_odd_even_empty() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn summary_uses_successful_trials() {
        let recs = vec![
            record("park", 0, vec![(1.0, 4.0), (2.0, 3.0)]),
            record("park", 1, vec![]),
            record("park", 2, vec![(3.0, 5.0)]),
            record("park", 3, vec![(0.5, 3.5), (9.0, 3.2)]),
            record("kink", 0, vec![]),
        ];
        let s = summarize(&recs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].scenario, "park");
        assert_eq!(s[0].success_rate, 0.75);
        assert_eq!(s[0].t_first, Some(1.0));
        assert_eq!(s[0].j_first, Some(4.0));
        assert_eq!(s[0].j_final, Some(3.2));
        assert_eq!(s[1].success_rate, 0.0);
        assert_eq!(s[1].j_final, None);
    }

    #[test]
    fn record_flags() {
        let r = record("park", 0, vec![(1.0, 4.0), (2.0, 3.0)]);
        assert!(r.success() && r.costs_decreasing() && r.delta_monotone());
        let mut bad = r.clone();
        bad.deltas = vec![0.3, 0.4];
        assert!(!bad.delta_monotone());
        bad.timeline = vec![(1.0, 3.0), (2.0, 3.0)];
        assert!(!bad.costs_decreasing());
    }

    #[test]
    fn csv_and_timeline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("park", 0, vec![(0.25, 3.3), (1.5, 3.1)]), record("park", 1, vec![])];
        write_csv(dir.path().join("r.csv"), &recs).unwrap();
        let rows = read_csv(dir.path().join("r.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], recs[0].to_row());
        assert_eq!(rows[1].j_first, None);
        assert!(!rows[1].success);
        write_timelines(dir.path().join("t.json"), &recs).unwrap();
        assert_eq!(read_timelines(dir.path().join("t.json")).unwrap(), recs);
    }
}
