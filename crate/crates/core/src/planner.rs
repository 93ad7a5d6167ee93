//! The anytime outer loop: grow the primitive set, shrink the discontinuity
//! bound, search, repair with the optimizer, harvest new primitives.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dbastar::{db_astar, heuristic, DbAstarParams, PrimitiveSet, SearchProblem, SearchStatus};
use crate::dynamics::{Control, State};
use crate::primitives::{compute_delta, extract_primitives, generate_primitives, sort_by_dispersion, GenerationConfig, PrimitiveLibrary, DEFAULT_PIECE_LENGTH};
use crate::scenario::Scenario;
use crate::trajopt::{optimize_with_time_search, FeasibilityReport, OptSettings};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Desired branching factor used to pick delta.
    pub b_d: usize,
    /// Share of delta spent on expansion; the rest on merging.
    pub alpha: f64,
    /// Primitives added in the first iteration; doubles every iteration.
    pub first_chunk: usize,
    pub piece_length: usize,
    /// Wall-clock budget, seconds.
    pub timeout: f64,
    pub max_iterations: Option<usize>,
    /// Random states used to estimate delta.
    pub n_samples: usize,
    pub seed: u64,
    /// Stop once a solution at or below this cost is found.
    pub target_cost: Option<f64>,
    pub max_solutions: Option<usize>,
    /// Expansion cap per search.
    pub max_expansions: Option<usize>,
    pub optimizer: OptSettings,
    pub generation: GenerationConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            b_d: 30,
            alpha: 0.5,
            first_chunk: 100,
            piece_length: DEFAULT_PIECE_LENGTH,
            timeout: 300.0,
            max_iterations: None,
            n_samples: 100,
            seed: 0,
            target_cost: None,
            max_solutions: None,
            max_expansions: None,
            optimizer: OptSettings::default(),
            generation: GenerationConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.b_d == 0 || self.n_samples == 0 {
            return cfg("b_d and n_samples must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return cfg("alpha must lie in (0, 1)");
        }
        if self.first_chunk == 0 {
            return cfg("the primitive schedule must add at least one primitive per iteration");
        }
        if self.b_d > self.first_chunk {
            return cfg("b_d cannot exceed the first chunk size");
        }
        if self.piece_length < 2 {
            return cfg("piece_length must be at least 2");
        }
        if !(self.timeout >= 0.0) {
            return cfg("timeout must be non-negative");
        }
        self.optimizer.validate()
    }

    /// Primitives added in iteration `n` (1-based).
    pub fn chunk_size(&self, n: usize) -> usize {
        let shift = (n.max(1) - 1).min(40) as u32;
        self.first_chunk.saturating_mul(1usize << shift)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub cost: f64,
    /// Seconds since the run started.
    pub found_at: f64,
    pub iteration: usize,
    pub residuals: FeasibilityReport,
}

impl Solution {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// One outer iteration. Contains no timings so identical runs serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primitives: usize,
    /// Of which freshly generated because the library ran out.
    pub generated: usize,
    pub delta: f64,
    /// Cost bound in force during the search; `None` while unbounded.
    pub cost_bound: Option<f64>,
    pub search: SearchStatus,
    pub expansions: usize,
    pub search_horizon: Option<usize>,
    /// Horizons tried by the optimizer and whether each converged.
    pub optimizer: Vec<(usize, bool)>,
    pub solution_cost: Option<f64>,
    pub extracted: usize,
}

/// Why the loop ended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    Timeout,
    IterationLimit,
    TargetCost,
    SolutionLimit,
    /// The best cost is within one step of the straight-line lower bound.
    LowerBound,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub scenario: String,
    pub system: String,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl RunTrace {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Wall-clock seconds per iteration, kept apart from the trace.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IterationTiming {
    pub search: f64,
    pub optimize: f64,
    pub finished_at: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PlanOutcome {
    /// Every reported solution, strictly decreasing in cost.
    pub solutions: Vec<Solution>,
    pub trace: RunTrace,
    pub timings: Vec<IterationTiming>,
}

impl PlanOutcome {
    pub fn best(&self) -> Option<&Solution> {
        self.solutions.last()
    }
}

const GENERATION_BATCH: usize = 512;

fn derived_seed(seed: u64, tag: &str, n: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(n.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Runs the planner until the timeout, the iteration limit or a stop rule.
/// `on_solution` sees every improving solution as soon as it is found.
pub fn plan(scenario: &Scenario, library: &PrimitiveLibrary, config: &PlannerConfig, mut on_solution: impl FnMut(&Solution)) -> Result<PlanOutcome> {
    config.validate()?;
    let system = &scenario.system;
    if library.system != system.name || library.variant != system.variant {
        return Err(Error::SystemMismatch {
            expected: system.id(),
            found: format!("{}/{}", library.system, library.variant),
        });
    }
    let started = Instant::now();
    let deadline = started + Duration::from_secs_f64(config.timeout.min(1e9));
    let metric = scenario.metric();
    let problem = SearchProblem {
        system,
        metric: &metric,
        environment: &scenario.environment,
        shape: &scenario.robot,
        start: scenario.start,
        goal: scenario.goal,
    };
    let mut set = PrimitiveSet::new(&metric, &scenario.robot);
    let mut cursor = 0;
    let mut cost_bound = f64::INFINITY;
    let mut out = PlanOutcome {
        trace: RunTrace {
            scenario: scenario.name.clone(),
            system: system.id(),
            seed: config.seed,
            iterations: Vec::new(),
            stop: StopReason::Timeout,
        },
        ..Default::default()
    };

    // Every trajectory has at least one step.
    let lower_bound = heuristic(system, &scenario.start, &scenario.goal).max(system.dt);
    for n in 1.. {
        if Instant::now() >= deadline {
            out.trace.stop = StopReason::Timeout;
            break;
        }
        if config.max_iterations.is_some_and(|m| n > m) {
            out.trace.stop = StopReason::IterationLimit;
            break;
        }
        let want = config.chunk_size(n);
        let from_library = want.min(library.primitives.len() - cursor);
        set.extend(library.primitives[cursor..cursor + from_library].iter().cloned());
        cursor += from_library;
        // Fresh primitives come in batches so a long chunk cannot overrun the deadline.
        let mut generated = 0;
        let mut batch = 0u64;
        while generated < want - from_library && Instant::now() < deadline {
            let count = (want - from_library - generated).min(GENERATION_BATCH);
            let seed = derived_seed(config.seed, "generate", ((n as u64) << 32) | batch);
            let fresh = generate_primitives(system, count, seed, &config.generation)?;
            set.extend(sort_by_dispersion(&metric, fresh));
            generated += count;
            batch += 1;
        }
        let delta = compute_delta(&metric, system, set.as_slice(), config.b_d, config.n_samples, config.seed)?;

        let t_search = Instant::now();
        let mut params = DbAstarParams::new(delta, config.alpha);
        params.max_cost = cost_bound;
        params.deadline = Some(deadline);
        params.max_expansions = config.max_expansions;
        let search = db_astar(&problem, &set, &params);
        let search_time = t_search.elapsed().as_secs_f64();

        let mut record = IterationRecord {
            iteration: n,
            primitives: set.len(),
            generated,
            delta,
            cost_bound: cost_bound.is_finite().then_some(cost_bound),
            search: search.status,
            expansions: search.stats.expansions,
            search_horizon: search.solution.as_ref().map(|s| s.horizon()),
            optimizer: Vec::new(),
            solution_cost: None,
            extracted: 0,
        };
        let t_opt = Instant::now();
        if let Some(guess) = &search.solution {
            let ts = optimize_with_time_search(
                system,
                Some((&scenario.environment, &scenario.robot)),
                &scenario.start,
                &scenario.goal,
                &guess.states,
                &guess.controls,
                &config.optimizer,
                cost_bound.is_finite().then_some(cost_bound),
            );
            record.optimizer = ts.attempts.iter().map(|r| (r.horizon(), r.converged)).collect();
            if let Some(best) = ts.best() {
                let cost = best.horizon() as f64 * system.dt;
                debug_assert!(best.residuals.ok && cost < cost_bound);
                let solution = Solution {
                    states: best.states.clone(),
                    controls: best.controls.clone(),
                    cost,
                    found_at: started.elapsed().as_secs_f64(),
                    iteration: n,
                    residuals: best.residuals.clone(),
                };
                on_solution(&solution);
                cost_bound = cost;
                record.solution_cost = Some(cost);
                out.solutions.push(solution);
            }
            if let Some(last) = ts.final_iterate() {
                // Replaying the recovered controls yields exactly consistent states.
                let replay = system.rollout(&last.states[0], &last.controls);
                let extracted = extract_primitives(system, &replay, &last.controls, config.piece_length);
                record.extracted = extracted.len();
                set.extend(extracted);
            }
        }
        out.timings.push(IterationTiming {
            search: search_time,
            optimize: t_opt.elapsed().as_secs_f64(),
            finished_at: started.elapsed().as_secs_f64(),
        });
        out.trace.iterations.push(record);
        if config.target_cost.is_some_and(|c| cost_bound <= c) {
            out.trace.stop = StopReason::TargetCost;
            break;
        }
        if config.max_solutions.is_some_and(|m| out.solutions.len() >= m) {
            out.trace.stop = StopReason::SolutionLimit;
            break;
        }
        // Costs are whole steps, so the next improvement would be at most c - dt.
        if cost_bound - system.dt < lower_bound - 1e-9 {
            out.trace.stop = StopReason::LowerBound;
            break;
        }
    }
    Ok(out)
}
