//! Helpers shared by the integration tests: random instances, cached
//! libraries and a brute-force search oracle.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::PathBuf;

use kmp_core::dynamics::{make_system, Control, State, SystemModel};
use kmp_core::geometry::{motion_valid_exhaustive, state_valid, Aabb, Environment, RobotShape};
use kmp_core::metric::{MetricWeights, StateMetric};
use kmp_core::primitives::{generate_primitives, sort_by_dispersion, GenerationConfig, MotionPrimitive, PrimitiveLibrary};
use kmp_core::scenario::Scenario;
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.yaml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).expect("shipped scenario parses")
}

/// Dispersion-sorted library, generated once per (system, count, seed) and
/// cached under the target directory.
pub fn library(system: &SystemModel, count: usize, seed: u64) -> PrimitiveLibrary {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(format!("{}_{}_{count}_{seed}.kmp", system.name, system.variant));
    if let Ok(lib) = PrimitiveLibrary::load(&path, system) {
        return lib;
    }
    let weights = MetricWeights::default();
    let metric = StateMetric::new(weights, system);
    let prims = generate_primitives(system, count, seed, &GenerationConfig::default()).expect("generation succeeds");
    let lib = PrimitiveLibrary::new(system, weights, sort_by_dispersion(&metric, prims));
    lib.save(&path).expect("cache write");
    lib
}

/// Box workspace with a few random obstacles.
pub fn random_environment(rng: &mut impl Rng, size: f64, max_obstacles: usize) -> Environment {
    let n = rng.gen_range(0..=max_obstacles);
    let obstacles = (0..n)
        .map(|_| {
            let c = [rng.gen_range(0.5..size - 0.5), rng.gen_range(0.5..size - 0.5)];
            let h = [rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)];
            Aabb::from_center(c, h)
        })
        .collect();
    Environment::new([0.0, 0.0], [size, size], obstacles).unwrap()
}

pub fn random_valid_state(rng: &mut impl Rng, system: &SystemModel, env: &Environment, shape: &RobotShape) -> State {
    loop {
        let mut x = kmp_core::primitives::sample_state(system, 1.0, rng);
        x[0] = rng.gen_range(env.bounds.min[0]..env.bounds.max[0]);
        x[1] = rng.gen_range(env.bounds.min[1]..env.bounds.max[1]);
        if state_valid(env, shape, system, &x) {
            return x;
        }
    }
}

/// Five-step unicycle motions from headings on a 0.25 rad lattice. Each
/// turns by 0 or +-0.25 rad, so chains stay on the lattice.
pub fn lattice_primitives(system: &SystemModel, headings: &[f64]) -> Vec<MotionPrimitive> {
    let mut out = Vec::new();
    for &th in headings {
        for v in [-0.5, -0.25, 0.25, 0.5] {
            for w in [-0.5, 0.0, 0.5] {
                let u = Control::from([v, w]);
                out.push(MotionPrimitive::from_rollout(system, &State::from([0.0, 0.0, th]), vec![u; 5]));
            }
        }
    }
    out
}

pub struct OracleResult {
    /// Cheapest cost of a goal state within the cap, if any.
    pub cost: Option<f64>,
    /// Two distinct reachable states lie within the merge radius.
    pub near_merge: bool,
    pub states: usize,
}

/// Uniform-cost enumeration of the stitching graph without any merging: from
/// `x` apply every motion whose start is within `alpha * delta` rotationally,
/// collision-checked state by state. Only coincident states are identified.
/// Enumerates every state costing at most the cheapest goal cost plus one
/// motion (or `cap`), then looks for pairs a merging search would fuse.
pub fn stitching_oracle(
    system: &SystemModel,
    metric: &StateMetric,
    env: &Environment,
    shape: &RobotShape,
    prims: &[MotionPrimitive],
    start: &State,
    goal: &State,
    delta: f64,
    alpha: f64,
    cap: f64,
) -> OracleResult {
    const SAME: f64 = 1e-9;
    let merge_r = (1.0 - alpha) * delta;
    let max_step = prims.iter().map(|m| m.cost).fold(0.0, f64::max);
    // Translation cells at least as wide as the merge radius: near pairs are
    // always in adjacent cells.
    let cell = merge_r.max(1e-3);
    let key = |s: &State| ((s[0] / cell).floor() as i64, (s[1] / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let near = |grid: &HashMap<(i64, i64), Vec<usize>>, s: &State| -> Vec<usize> {
        let (cx, cy) = key(s);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                out.extend(grid.get(&(cx + dx, cy + dy)).into_iter().flatten());
            }
        }
        out
    };
    let mut states: Vec<(State, f64)> = vec![(*start, 0.0)];
    grid.entry(key(start)).or_default().push(0);
    let mut settled = vec![false];
    // Costs are non-negative, so their bit patterns order like the values.
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0.0f64.to_bits(), 0usize)));
    let mut best: Option<f64> = None;
    while let Some(Reverse((gb, id))) = heap.pop() {
        let g = f64::from_bits(gb);
        if settled[id] || g != states[id].1 {
            continue;
        }
        settled[id] = true;
        let x = states[id].0;
        if g > best.map_or(cap, |c| c + max_step) + 1e-9 {
            break;
        }
        if best.is_none() && metric.distance(&x, goal) <= delta {
            best = Some(g);
        }
        for m in prims {
            if metric.rotational_distance(m.start(), &x) > alpha * delta {
                continue;
            }
            let offset = x.translation();
            if !motion_valid_exhaustive(env, shape, system, m, offset) {
                continue;
            }
            let y = m.end().translated(offset);
            let gy = g + m.cost;
            if gy > cap + max_step + 1e-9 {
                continue;
            }
            let same = near(&grid, &y).into_iter().find(|&j| metric.distance(&states[j].0, &y) <= SAME);
            match same {
                Some(j) => {
                    if gy < states[j].1 && !settled[j] {
                        states[j].1 = gy;
                        heap.push(Reverse((gy.to_bits(), j)));
                    }
                }
                None => {
                    let j = states.len();
                    states.push((y, gy));
                    settled.push(false);
                    grid.entry(key(&y)).or_default().push(j);
                    heap.push(Reverse((gy.to_bits(), j)));
                }
            }
        }
    }
    let limit = best.map_or(cap, |c| c + max_step) + 1e-9;
    let mut near_merge = false;
    'outer: for (i, (s, g)) in states.iter().enumerate() {
        if *g > limit {
            continue;
        }
        for j in near(&grid, s) {
            if j <= i || states[j].1 > limit {
                continue;
            }
            let d = metric.distance(s, &states[j].0);
            if d > SAME && d <= merge_r + 1e-9 {
                near_merge = true;
                break 'outer;
            }
        }
    }
    OracleResult {
        cost: best,
        near_merge,
        states: states.len(),
    }
}

pub fn unicycle(variant: &str) -> SystemModel {
    make_system("unicycle1", variant).unwrap()
}
