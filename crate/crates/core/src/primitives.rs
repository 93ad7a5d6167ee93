//! Motion primitives: short dynamically feasible motions starting at the
//! origin of the workspace, reusable anywhere by translation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{make_system, Control, State, SystemKind, SystemModel};
use crate::geometry::{RobotShape, SweptVolume};
use crate::metric::{IndexMode, MetricWeights, NnIndex, StateMetric};
use crate::trajopt::{solve_bvp_with_guess, BvpGuess, OptSettings};
use crate::{Error, Result};

pub const DEFAULT_PIECE_LENGTH: usize = 5;

/// Largest per-step dynamics residual a primitive may carry.
pub const PRIMITIVE_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct MotionPrimitive {
    /// `T + 1` states; the first has zero translation.
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    /// Duration `T * dt`, seconds.
    pub cost: f64,
    swept: Option<SweptVolume>,
}

impl PartialEq for MotionPrimitive {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states && self.controls == other.controls && self.cost == other.cost
    }
}

impl MotionPrimitive {
    /// Wraps a motion without checking it; see [`validate_primitive`].
    pub fn new(system: &SystemModel, states: Vec<State>, controls: Vec<Control>) -> Self {
        let cost = controls.len() as f64 * system.dt;
        Self {
            states,
            controls,
            cost,
            swept: None,
        }
    }

    /// Rolls `controls` out from `start` moved to the origin.
    pub fn from_rollout(system: &SystemModel, start: &State, controls: Vec<Control>) -> Self {
        let t = start.translation();
        let states = system.rollout(&start.translated([-t[0], -t[1]]), &controls);
        Self::new(system, states, controls)
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn start(&self) -> &State {
        &self.states[0]
    }

    pub fn end(&self) -> &State {
        &self.states[self.states.len() - 1]
    }

    /// Cached bounds for broadphase collision checks, if prepared.
    pub fn swept(&self) -> Option<&SweptVolume> {
        self.swept.as_ref()
    }

    pub fn prepare(&mut self, shape: &RobotShape) {
        self.swept = Some(SweptVolume::compute(shape, &self.states));
    }

    /// States of `self ⊕ offset`.
    pub fn translated_states(&self, offset: [f64; 2]) -> impl Iterator<Item = State> + '_ {
        self.states.iter().map(move |x| x.translated(offset))
    }
}

/// Origin start, consistent dynamics, in-bounds controls and states, and
/// cost equal to duration.
pub fn validate_primitive(system: &SystemModel, m: &MotionPrimitive) -> bool {
    let t = m.controls.len();
    if t == 0 || m.states.len() != t + 1 {
        return false;
    }
    if m.states.iter().any(|x| x.len() != system.d_x) || m.controls.iter().any(|u| u.len() != system.d_u) {
        return false;
    }
    if m.states[0].translation() != [0.0; 2] {
        return false;
    }
    if (m.cost - t as f64 * system.dt).abs() > 1e-12 {
        return false;
    }
    if !system.controls_in_bounds(&m.controls) || !m.states.iter().all(|x| system.state_in_bounds(x)) {
        return false;
    }
    m.controls
        .iter()
        .enumerate()
        .all(|(k, u)| system.dynamics_residual(&m.states[k], u, &m.states[k + 1]) <= PRIMITIVE_RESIDUAL_TOL)
}

fn canonical(states: &[State]) -> Vec<State> {
    let t = states[0].translation();
    states.iter().map(|x| x.translated([-t[0], -t[1]])).collect()
}

/// Cuts a motion into consecutive pieces of `piece_length` steps, each moved
/// to the origin. A trailing piece shorter than two steps is dropped.
pub fn split_motion(system: &SystemModel, states: &[State], controls: &[Control], piece_length: usize) -> Vec<MotionPrimitive> {
    assert_eq!(states.len(), controls.len() + 1, "need |X| = |U| + 1");
    assert!(piece_length >= 2, "piece_length must be at least 2");
    let total = controls.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < total {
        let len = piece_length.min(total - i);
        if len < 2 {
            break;
        }
        out.push(MotionPrimitive::new(
            system,
            canonical(&states[i..=i + len]),
            controls[i..i + len].to_vec(),
        ));
        i += len;
    }
    out
}

/// Primitives from the maximal runs of valid steps in a possibly infeasible
/// trajectory.
pub fn extract_primitives(system: &SystemModel, states: &[State], controls: &[Control], piece_length: usize) -> Vec<MotionPrimitive> {
    assert_eq!(states.len(), controls.len() + 1, "need |X| = |U| + 1");
    let valid_step = |k: usize| {
        let u = &controls[k];
        system.control_in_bounds(u)
            && states[k].len() == system.d_x
            && states[k + 1].len() == system.d_x
            && system.state_in_bounds(&states[k])
            && system.state_in_bounds(&states[k + 1])
            && system.dynamics_residual(&states[k], u, &states[k + 1]) <= PRIMITIVE_RESIDUAL_TOL
    };
    let mut out = Vec::new();
    let mut k = 0;
    while k < controls.len() {
        if !valid_step(k) {
            k += 1;
            continue;
        }
        let a = k;
        while k < controls.len() && valid_step(k) {
            k += 1;
        }
        out.extend(split_motion(system, &states[a..=k], &controls[a..k], piece_length));
    }
    out
}

/// Greedy dispersion order: start with the primitive whose end is farthest
/// from its start, then repeatedly pick the one maximizing the summed
/// distances of its start and end to the closest already picked start and
/// end. Ties go to the earlier input.
pub fn dispersion_order(metric: &StateMetric, primitives: &[MotionPrimitive]) -> Vec<usize> {
    let n = primitives.len();
    if n == 0 {
        return Vec::new();
    }
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, m) in primitives.iter().enumerate() {
        let d = metric.distance(m.start(), m.end());
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut picked = vec![false; n];
    let mut min_start = vec![f64::INFINITY; n];
    let mut min_end = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(n);
    let mut current = first;
    loop {
        picked[current] = true;
        order.push(current);
        if order.len() == n {
            break;
        }
        let (cs, ce) = (primitives[current].start(), primitives[current].end());
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for r in 0..n {
            if picked[r] {
                continue;
            }
            min_start[r] = min_start[r].min(metric.distance(primitives[r].start(), cs));
            min_end[r] = min_end[r].min(metric.distance(primitives[r].end(), ce));
            let score = min_start[r] + min_end[r];
            if score > best {
                best = score;
                next = r;
            }
        }
        current = next;
    }
    order
}

pub fn sort_by_dispersion(metric: &StateMetric, primitives: Vec<MotionPrimitive>) -> Vec<MotionPrimitive> {
    let order = dispersion_order(metric, &primitives);
    let mut slots: Vec<Option<MotionPrimitive>> = primitives.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().expect("order is a permutation")).collect()
}

/// Half side of the translation box random states are drawn from, meters.
pub const SAMPLE_HALF_BOX: f64 = 2.0;

/// Random state: translation uniform in `[-half_box, half_box]^2`, angles
/// uniform, velocities uniform within bounds, trailer within the hitch limit.
pub fn sample_state(system: &SystemModel, half_box: f64, rng: &mut impl Rng) -> State {
    use std::f64::consts::PI;
    let mut x = State::zeros(system.d_x);
    for i in 0..system.d_x {
        x[i] = match system.components[i] {
            crate::dynamics::ComponentKind::Translation => rng.gen_range(-half_box..=half_box),
            crate::dynamics::ComponentKind::Angle => rng.gen_range(-PI..PI),
            crate::dynamics::ComponentKind::Velocity => rng.gen_range(system.x_lo[i]..=system.x_hi[i]),
        };
    }
    if system.kind == SystemKind::CarWithTrailer {
        let lim = 0.9 * system.params.max_hitch_angle;
        x[3] = x[2] + rng.gen_range(-lim..lim);
    }
    system.normalize(&mut x);
    x
}

/// Mean over `n_samples` random states of the distance to the `b_d`-th
/// nearest primitive start, ignoring translation.
pub fn compute_delta(metric: &StateMetric, system: &SystemModel, primitives: &[MotionPrimitive], b_d: usize, n_samples: usize, seed: u64) -> Result<f64> {
    if b_d == 0 || n_samples == 0 {
        return Err(Error::Config("b_d and n_samples must be positive".into()));
    }
    if primitives.len() < b_d {
        return Err(Error::Config(format!(
            "need at least b_d = {b_d} primitives, have {}",
            primitives.len()
        )));
    }
    let index = NnIndex::build(metric, IndexMode::Rotational, primitives.iter().enumerate().map(|(i, m)| (m.start(), i)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let x = sample_state(system, SAMPLE_HALF_BOX, &mut rng);
        let knn = index.query_knn(&x, b_d);
        sum += knn[b_d - 1].1;
    }
    Ok(sum / n_samples as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub piece_length: usize,
    pub max_horizon: usize,
    pub optimizer: OptSettings,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            piece_length: DEFAULT_PIECE_LENGTH,
            max_horizon: 64,
            optimizer: OptSettings::default(),
        }
    }
}

fn task_seed(seed: u64, task: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Random piecewise-constant in-bounds controls from `start`, at most
/// `max_steps` long. The goal is the rollout's end; the rollout seeds the
/// optimizer.
fn random_rollout(system: &SystemModel, start: &State, max_steps: usize, rng: &mut impl Rng) -> (Vec<State>, Vec<Control>) {
    let segments = rng.gen_range(1..=3);
    let mut controls = Vec::new();
    for _ in 0..segments {
        let len = rng.gen_range(5..=20);
        let mut u = Control::zeros(system.d_u);
        for i in 0..system.d_u {
            u[i] = rng.gen_range(system.u_lo[i]..=system.u_hi[i]);
        }
        controls.extend(std::iter::repeat(u).take(len));
    }
    controls.truncate(max_steps.max(1));
    let mut states = vec![*start];
    for (k, u) in controls.iter().enumerate() {
        let x = system.step(&states[k], u);
        if !system.state_in_bounds(&x) {
            controls.truncate(k);
            break;
        }
        states.push(x);
    }
    (states, controls)
}

/// Primitives from one random boundary value problem; `None` when it fails.
fn generation_task(system: &SystemModel, config: &GenerationConfig, seed: u64, task: u64) -> Option<Vec<MotionPrimitive>> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task));
    let a = sample_state(system, SAMPLE_HALF_BOX, &mut rng);
    let t = a.translation();
    let a = a.translated([-t[0], -t[1]]);
    let (guess_x, guess_u) = random_rollout(system, &a, config.max_horizon, &mut rng);
    if guess_u.len() < 2 {
        return None;
    }
    let b = guess_x[guess_x.len() - 1];
    let guess = BvpGuess {
        states: &guess_x,
        controls: &guess_u,
    };
    let sol = solve_bvp_with_guess(system, &a, &b, config.max_horizon, &config.optimizer, Some(guess))?;
    // Replaying the recovered controls makes each piece exactly consistent.
    let states = system.rollout(&a, &sol.controls);
    let pieces: Vec<MotionPrimitive> = extract_primitives(system, &states, &sol.controls, config.piece_length)
        .into_iter()
        .filter(|m| validate_primitive(system, m))
        .collect();
    (!pieces.is_empty()).then_some(pieces)
}

/// Deterministic for a given seed, independent of the thread count.
pub fn generate_primitives(system: &SystemModel, count: usize, seed: u64, config: &GenerationConfig) -> Result<Vec<MotionPrimitive>> {
    if count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    if config.piece_length < 2 {
        return Err(Error::Config("piece_length must be at least 2".into()));
    }
    config.optimizer.validate()?;
    let batch = rayon::current_num_threads().max(1) * 4;
    let mut out = Vec::with_capacity(count);
    let (mut tasks, mut failures) = (0u64, 0u64);
    while out.len() < count {
        let results: Vec<Option<Vec<MotionPrimitive>>> = (tasks..tasks + batch as u64)
            .into_par_iter()
            .map(|task| generation_task(system, config, seed, task))
            .collect();
        for r in results {
            tasks += 1;
            match r {
                Some(pieces) => out.extend(pieces),
                None => failures += 1,
            }
            if out.len() >= count {
                break;
            }
        }
        if tasks >= 20 && failures as f64 > 0.95 * tasks as f64 {
            return Err(Error::Generation(format!(
                "{failures} of {tasks} boundary value problems failed for {}",
                system.id()
            )));
        }
    }
    out.truncate(count);
    Ok(out)
}

const MAGIC: &[u8; 8] = b"KMPPRIM\0";
pub const LIBRARY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveLibrary {
    pub system: String,
    pub variant: String,
    /// Metric used when the library was ordered.
    pub metric: MetricWeights,
    pub primitives: Vec<MotionPrimitive>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    system: String,
    variant: String,
    metric: MetricWeights,
    count: usize,
    state_dim: usize,
    control_dim: usize,
    steps: Vec<usize>,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl PrimitiveLibrary {
    pub fn new(system: &SystemModel, metric: MetricWeights, primitives: Vec<MotionPrimitive>) -> Self {
        Self {
            system: system.name.clone(),
            variant: system.variant.clone(),
            metric,
            primitives,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Layout: 8 magic bytes, little-endian `u32` header length, JSON header,
    /// then every primitive's states followed by its controls as `f64` LE.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let system = make_system(&self.system, &self.variant)?;
        let mut payload = Vec::new();
        for m in &self.primitives {
            for v in m.states.iter().flat_map(|x| x.as_slice().to_vec()).chain(m.controls.iter().flat_map(|u| u.as_slice().to_vec())) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: LIBRARY_VERSION,
            system: self.system.clone(),
            variant: self.variant.clone(),
            metric: self.metric,
            count: self.primitives.len(),
            state_dim: system.d_x,
            control_dim: system.d_u,
            steps: self.primitives.iter().map(|m| m.steps()).collect(),
            sha256: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses and validates a library for `system`.
    pub fn from_bytes(bytes: &[u8], system: &SystemModel) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(fmt("not a primitive library"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.version != LIBRARY_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {} (expected {LIBRARY_VERSION})",
                header.version
            )));
        }
        if header.system != system.name || header.variant != system.variant {
            return Err(Error::SystemMismatch {
                expected: system.id(),
                found: format!("{}/{}", header.system, header.variant),
            });
        }
        if header.state_dim != system.d_x || header.control_dim != system.d_u || header.steps.len() != header.count {
            return Err(fmt("header dimensions disagree with the system"));
        }
        let payload = &bytes[12 + hlen..];
        let expected: usize = header
            .steps
            .iter()
            .map(|t| ((t + 1) * system.d_x + t * system.d_u) * 8)
            .sum();
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        if hex(&Sha256::digest(payload)) != header.sha256 {
            return Err(fmt("checksum mismatch"));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let mut primitives = Vec::with_capacity(header.count);
        for (i, &t) in header.steps.iter().enumerate() {
            let states = (0..=t).map(|_| State::new(&take(system.d_x))).collect();
            let controls = (0..t).map(|_| Control::new(&take(system.d_u))).collect();
            let m = MotionPrimitive::new(system, states, controls);
            if !validate_primitive(system, &m) {
                return Err(Error::validation("primitive library", format!("primitive {i} is not a valid motion")));
            }
            primitives.push(m);
        }
        Ok(Self {
            system: header.system,
            variant: header.variant,
            metric: header.metric,
            primitives,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, system: &SystemModel) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, system)
    }
}
