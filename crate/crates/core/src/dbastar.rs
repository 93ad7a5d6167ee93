//! Discontinuity-bounded A*.
//!
//! Nodes are expanded by translating primitives whose start lies within
//! `alpha * delta` of the node (ignoring translation), and new nodes within
//! `(1 - alpha) * delta` of an explored one are merged into it. The returned
//! trajectory therefore jumps by at most `delta` at every junction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State, SystemModel};
use crate::geometry::{motion_valid, state_valid, Environment, RobotShape};
use crate::metric::{IndexMode, NnIndex, StateMetric};
use crate::primitives::MotionPrimitive;

/// Straight-line travel time at the system's top speed.
pub fn heuristic(system: &SystemModel, x: &State, goal: &State) -> f64 {
    let (a, b) = (x.translation(), goal.translation());
    (a[0] - b[0]).hypot(a[1] - b[1]) / system.max_speed()
}

/// Primitives available to the search, with their swept volumes prepared and
/// their start states indexed.
pub struct PrimitiveSet {
    shape: RobotShape,
    primitives: Vec<MotionPrimitive>,
    starts: NnIndex<usize>,
}

impl PrimitiveSet {
    pub fn new(metric: &StateMetric, shape: &RobotShape) -> Self {
        Self {
            shape: shape.clone(),
            primitives: Vec::new(),
            starts: NnIndex::new(metric, IndexMode::Rotational),
        }
    }

    pub fn push(&mut self, mut m: MotionPrimitive) {
        m.prepare(&self.shape);
        self.starts.insert(m.start(), self.primitives.len());
        self.primitives.push(m);
    }

    pub fn extend(&mut self, ms: impl IntoIterator<Item = MotionPrimitive>) {
        for m in ms {
            self.push(m);
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn as_slice(&self) -> &[MotionPrimitive] {
        &self.primitives
    }

    pub fn shape(&self) -> &RobotShape {
        &self.shape
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SearchProblem<'a> {
    pub system: &'a SystemModel,
    pub metric: &'a StateMetric,
    pub environment: &'a Environment,
    pub shape: &'a RobotShape,
    pub start: State,
    pub goal: State,
}

#[derive(Clone, Debug)]
pub struct DbAstarParams {
    pub delta: f64,
    pub alpha: f64,
    /// Nodes with `g + h >= max_cost` are discarded.
    pub max_cost: f64,
    pub max_expansions: Option<usize>,
    pub deadline: Option<Instant>,
    /// Keep the f-value of every expanded node in the stats.
    pub record_expansions: bool,
}

impl DbAstarParams {
    pub fn new(delta: f64, alpha: f64) -> Self {
        Self {
            delta,
            alpha,
            max_cost: f64::INFINITY,
            max_expansions: None,
            deadline: None,
            record_expansions: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SearchStats {
    pub expansions: usize,
    pub inserted: usize,
    pub rewired: usize,
    pub popped_f: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DbSolution {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub cost: f64,
    /// Metric distance between the end of each motion and the next state.
    pub junction_gaps: Vec<f64>,
    /// Library indices of the concatenated motions, in order.
    pub motions: Vec<usize>,
}

impl DbSolution {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Solved,
    /// The open queue emptied.
    Exhausted,
    /// Deadline or expansion limit reached first.
    Interrupted,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub status: SearchStatus,
    pub solution: Option<DbSolution>,
    pub stats: SearchStats,
}

struct Node {
    x: State,
    g: f64,
    h: f64,
    parent: Option<usize>,
    motion: Option<usize>,
    closed: bool,
}

struct Entry {
    f: f64,
    h: f64,
    seq: u64,
    g: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // BinaryHeap is a max-heap: reverse so the smallest (f, h, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Searches for a trajectory whose stitching errors, start gap and goal gap
/// are all at most `delta`.
pub fn db_astar(problem: &SearchProblem, set: &PrimitiveSet, params: &DbAstarParams) -> SearchResult {
    assert!(params.delta >= 0.0, "delta must be non-negative");
    assert!(params.alpha > 0.0 && params.alpha < 1.0, "alpha must lie in (0, 1)");
    let SearchProblem {
        system,
        metric,
        environment: env,
        shape,
        start,
        goal,
    } = *problem;
    let expand_r = params.alpha * params.delta;
    let merge_r = (1.0 - params.alpha) * params.delta;

    let mut stats = SearchStats::default();
    let mut nodes: Vec<Node> = Vec::new();
    let mut explored: NnIndex<usize> = NnIndex::new(metric, IndexMode::Full);
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;

    let h0 = heuristic(system, &start, &goal);
    if h0 < params.max_cost {
        nodes.push(Node {
            x: start,
            g: 0.0,
            h: h0,
            parent: None,
            motion: None,
            closed: false,
        });
        explored.insert(&start, 0);
        stats.inserted = 1;
        open.push(Entry {
            f: h0,
            h: h0,
            seq,
            g: 0.0,
            node: 0,
        });
        seq += 1;
    }

    let mut applicable: Vec<usize> = Vec::new();
    let mut neighbors: Vec<usize> = Vec::new();
    while let Some(entry) = open.pop() {
        let id = entry.node;
        if nodes[id].closed || entry.g != nodes[id].g {
            continue;
        }
        if params.max_expansions.is_some_and(|m| stats.expansions >= m)
            || params.deadline.is_some_and(|d| Instant::now() >= d)
        {
            return SearchResult {
                status: SearchStatus::Interrupted,
                solution: None,
                stats,
            };
        }
        nodes[id].closed = true;
        stats.expansions += 1;
        if params.record_expansions {
            stats.popped_f.push(entry.f);
        }
        let x = nodes[id].x;
        if metric.distance(&x, &goal) <= params.delta {
            let solution = reconstruct(system, metric, set, &nodes, id);
            return SearchResult {
                status: SearchStatus::Solved,
                solution: Some(solution),
                stats,
            };
        }

        applicable.clear();
        set.starts.for_each_within(&x, expand_r, |i, _| applicable.push(i));
        applicable.sort_unstable();
        let offset = x.translation();
        for &mi in &applicable {
            let m = &set.primitives[mi];
            let g_t = nodes[id].g + m.cost;
            let x_new = m.end().translated(offset);
            let h_t = heuristic(system, &x_new, &goal);
            if g_t + h_t >= params.max_cost {
                continue;
            }
            if !motion_valid(env, shape, system, m, offset) {
                continue;
            }
            neighbors.clear();
            explored.for_each_within(&x_new, merge_r, |n, _| neighbors.push(n));
            if neighbors.is_empty() {
                let nid = nodes.len();
                nodes.push(Node {
                    x: x_new,
                    g: g_t,
                    h: h_t,
                    parent: Some(id),
                    motion: Some(mi),
                    closed: false,
                });
                explored.insert(&x_new, nid);
                stats.inserted += 1;
                open.push(Entry {
                    f: g_t + h_t,
                    h: h_t,
                    seq,
                    g: g_t,
                    node: nid,
                });
                seq += 1;
                continue;
            }
            neighbors.sort_unstable();
            for &n in &neighbors {
                let node = &mut nodes[n];
                if node.closed || g_t >= node.g {
                    continue;
                }
                node.g = g_t;
                node.parent = Some(id);
                node.motion = Some(mi);
                stats.rewired += 1;
                open.push(Entry {
                    f: g_t + node.h,
                    h: node.h,
                    seq,
                    g: g_t,
                    node: n,
                });
                seq += 1;
            }
        }
    }
    SearchResult {
        status: SearchStatus::Exhausted,
        solution: None,
        stats,
    }
}

/// Concatenates the arrival motions along the parent chain, each translated
/// to its parent's position, and ends at the goal node's state.
fn reconstruct(system: &SystemModel, metric: &StateMetric, set: &PrimitiveSet, nodes: &[Node], goal_node: usize) -> DbSolution {
    let mut chain = Vec::new();
    let mut cur = goal_node;
    while let (Some(p), Some(m)) = (nodes[cur].parent, nodes[cur].motion) {
        chain.push((p, m));
        cur = p;
    }
    chain.reverse();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut junction_gaps = Vec::new();
    let mut motions = Vec::new();
    for (i, &(parent, mi)) in chain.iter().enumerate() {
        let m = &set.primitives[mi];
        let offset = nodes[parent].x.translation();
        let translated: Vec<State> = m.translated_states(offset).collect();
        states.extend_from_slice(&translated[..m.steps()]);
        controls.extend_from_slice(&m.controls);
        motions.push(mi);
        let end = translated[m.steps()];
        let next = match chain.get(i + 1) {
            Some(&(next_parent, next_m)) => set.primitives[next_m].start().translated(nodes[next_parent].x.translation()),
            None => nodes[goal_node].x,
        };
        junction_gaps.push(metric.distance(&end, &next));
    }
    states.push(nodes[goal_node].x);
    let cost = controls.len() as f64 * system.dt;
    DbSolution {
        states,
        controls,
        cost,
        junction_gaps,
        motions,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    DynamicsGap,
    ControlBounds,
    InvalidState,
    StartGap,
    GoalGap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    /// Step or state index; 0 for the start and goal conditions.
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BoundedReport {
    pub ok: bool,
    pub max_dynamics_gap: f64,
    pub start_gap: f64,
    pub goal_gap: f64,
    pub violations: Vec<Violation>,
}

/// Absolute slack for floating-point round-off in the comparisons with delta.
pub const BOUND_SLACK: f64 = 1e-9;

/// Checks that every step gap, the start gap and the goal gap are within
/// `delta`, that all controls are in bounds and every state is valid.
#[allow(clippy::too_many_arguments)]
pub fn check_db_bounded(
    system: &SystemModel,
    metric: &StateMetric,
    env: &Environment,
    shape: &RobotShape,
    states: &[State],
    controls: &[Control],
    delta: f64,
    start: &State,
    goal: &State,
) -> BoundedReport {
    assert_eq!(states.len(), controls.len() + 1, "need |X| = |U| + 1");
    let limit = delta + BOUND_SLACK;
    let mut r = BoundedReport::default();
    for (k, u) in controls.iter().enumerate() {
        let gap = metric.distance(&states[k + 1], &system.step(&states[k], u));
        r.max_dynamics_gap = r.max_dynamics_gap.max(gap);
        if gap > limit {
            r.violations.push(Violation {
                condition: Condition::DynamicsGap,
                index: k,
                value: gap,
            });
        }
        if !system.control_in_bounds(u) {
            r.violations.push(Violation {
                condition: Condition::ControlBounds,
                index: k,
                value: 0.0,
            });
        }
    }
    for (k, x) in states.iter().enumerate() {
        if !state_valid(env, shape, system, x) {
            r.violations.push(Violation {
                condition: Condition::InvalidState,
                index: k,
                value: 0.0,
            });
        }
    }
    r.start_gap = metric.distance(&states[0], start);
    if r.start_gap > limit {
        r.violations.push(Violation {
            condition: Condition::StartGap,
            index: 0,
            value: r.start_gap,
        });
    }
    r.goal_gap = metric.distance(&states[states.len() - 1], goal);
    if r.goal_gap > limit {
        r.violations.push(Violation {
            condition: Condition::GoalGap,
            index: states.len() - 1,
            value: r.goal_gap,
        });
    }
    r.ok = r.violations.is_empty();
    r
}
