//! Incremental k-d index for radius and k-nearest queries under
//! [`StateMetric`].
//!
//! Insertions go to a small linear buffer; a full buffer is merged with the
//! static trees of a logarithmic forest (the Bentley–Saxe construction), so
//! inserts cost amortized `O(log^2 n)` and no query ever rescans everything.
//! Node pruning uses [`StateMetric::lower_bound_to_box`], which understands
//! wrapped angles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::dynamics::{ComponentKind, State, MAX_STATE_DIM};

use super::StateMetric;

const BUFFER_CAPACITY: usize = 32;
const LEAF_SIZE: usize = 8;
const NO_CHILD: u32 = u32::MAX;

/// Which components an index compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexMode {
    /// All components.
    Full,
    /// Non-translational components only, i.e. states compared as if both
    /// sat at the workspace origin.
    Rotational,
}

#[derive(Clone, Copy)]
struct Entry<T> {
    point: [f64; MAX_STATE_DIM],
    item: T,
}

#[derive(Clone, Copy)]
struct Node {
    lo: [f64; MAX_STATE_DIM],
    hi: [f64; MAX_STATE_DIM],
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

struct Tree<T> {
    entries: Vec<Entry<T>>,
    nodes: Vec<Node>,
}

impl<T: Copy> Tree<T> {
    fn build(mut entries: Vec<Entry<T>>, dim: usize) -> Self {
        let mut nodes = Vec::with_capacity(2 * entries.len() / LEAF_SIZE + 1);
        let n = entries.len();
        Self::build_node(&mut entries, &mut nodes, 0, n, dim);
        Tree { entries, nodes }
    }

    fn build_node(entries: &mut [Entry<T>], nodes: &mut Vec<Node>, start: usize, end: usize, dim: usize) -> u32 {
        let mut lo = [f64::INFINITY; MAX_STATE_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_STATE_DIM];
        for e in &entries[start..end] {
            for d in 0..dim {
                lo[d] = lo[d].min(e.point[d]);
                hi[d] = hi[d].max(e.point[d]);
            }
        }
        let id = nodes.len() as u32;
        nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            end: end as u32,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if end - start > LEAF_SIZE {
            let split = (0..dim)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap_or(0);
            let mid = start + (end - start) / 2;
            entries[start..end].select_nth_unstable_by(mid - start, |a, b| a.point[split].total_cmp(&b.point[split]));
            let left = Self::build_node(entries, nodes, start, mid, dim);
            let right = Self::build_node(entries, nodes, mid, end, dim);
            nodes[id as usize].left = left;
            nodes[id as usize].right = right;
        }
        id
    }
}

#[derive(PartialEq)]
struct Candidate<T> {
    dist: f64,
    seq: u64,
    item: T,
}

impl<T: PartialEq> Eq for Candidate<T> {}

impl<T: PartialEq> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialEq> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.seq.cmp(&other.seq))
    }
}

/// Multiset of states (with payloads) supporting incremental insertion.
pub struct NnIndex<T> {
    metric: StateMetric,
    dims: Vec<usize>,
    buffer: Vec<Entry<T>>,
    levels: Vec<Option<Tree<T>>>,
    len: usize,
}

impl<T: Copy + PartialEq> NnIndex<T> {
    pub fn new(metric: &StateMetric, mode: IndexMode) -> Self {
        let dims: Vec<usize> = metric
            .components()
            .iter()
            .enumerate()
            .filter(|(_, k)| mode == IndexMode::Full || **k != ComponentKind::Translation)
            .map(|(i, _)| i)
            .collect();
        let reduced = match mode {
            IndexMode::Full => metric.clone(),
            IndexMode::Rotational => metric.rotational_part(),
        };
        Self {
            metric: reduced,
            dims,
            buffer: Vec::with_capacity(BUFFER_CAPACITY),
            levels: Vec::new(),
            len: 0,
        }
    }

    /// `nn_build`: an index over `points`.
    pub fn build<'a>(metric: &StateMetric, mode: IndexMode, points: impl IntoIterator<Item = (&'a State, T)>) -> Self {
        let mut index = Self::new(metric, mode);
        let entries: Vec<Entry<T>> = points.into_iter().map(|(x, item)| index.entry(x, item)).collect();
        index.len = entries.len();
        if entries.len() <= BUFFER_CAPACITY {
            index.buffer = entries;
        } else {
            // A single tree; later inserts start filling the lower levels.
            let level = (entries.len() / BUFFER_CAPACITY).ilog2() as usize + 1;
            index.levels.resize_with(level + 1, || None);
            index.levels[level] = Some(Tree::build(entries, index.dims.len()));
        }
        index
    }

    fn project(&self, x: &State) -> [f64; MAX_STATE_DIM] {
        let mut point = [0.0; MAX_STATE_DIM];
        for (j, &i) in self.dims.iter().enumerate() {
            point[j] = x[i];
        }
        point
    }

    fn entry(&self, x: &State, item: T) -> Entry<T> {
        Entry {
            point: self.project(x),
            item,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `nn_add`. Duplicates are kept.
    pub fn insert(&mut self, x: &State, item: T) {
        let e = self.entry(x, item);
        self.buffer.push(e);
        self.len += 1;
        if self.buffer.len() < BUFFER_CAPACITY {
            return;
        }
        let mut carry: Vec<Entry<T>> = std::mem::take(&mut self.buffer);
        let mut level = 0;
        loop {
            if level == self.levels.len() {
                self.levels.push(None);
            }
            match self.levels[level].take() {
                Some(tree) => {
                    carry.extend(tree.entries);
                    level += 1;
                }
                None => break,
            }
        }
        self.levels[level] = Some(Tree::build(carry, self.dims.len()));
        self.buffer = Vec::with_capacity(BUFFER_CAPACITY);
    }

    fn dist(&self, q: &[f64; MAX_STATE_DIM], p: &[f64; MAX_STATE_DIM]) -> f64 {
        let n = self.dims.len();
        self.metric.distance_slices(&q[..n], &p[..n])
    }

    /// `nn_query_radius`: every entry with distance `<= r`, in no particular order.
    pub fn query_radius(&self, x: &State, r: f64) -> Vec<(T, f64)> {
        let mut out = Vec::new();
        self.for_each_within(x, r, |item, d| out.push((item, d)));
        out
    }

    pub fn for_each_within(&self, x: &State, r: f64, mut f: impl FnMut(T, f64)) {
        let q = self.project(x);
        let n = self.dims.len();
        for e in &self.buffer {
            let d = self.dist(&q, &e.point);
            if d <= r {
                f(e.item, d);
            }
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        for tree in self.levels.iter().flatten() {
            stack.push(0);
            while let Some(id) = stack.pop() {
                let node = &tree.nodes[id as usize];
                if self.metric.lower_bound_to_box(&q[..n], &node.lo[..n], &node.hi[..n]) > r {
                    continue;
                }
                if node.left == NO_CHILD {
                    for e in &tree.entries[node.start as usize..node.end as usize] {
                        let d = self.dist(&q, &e.point);
                        if d <= r {
                            f(e.item, d);
                        }
                    }
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
    }

    /// The `k` nearest entries sorted by ascending distance.
    pub fn query_knn(&self, x: &State, k: usize) -> Vec<(T, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let q = self.project(x);
        let n = self.dims.len();
        let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(k + 1);
        let mut seq = 0u64;
        let mut offer = |heap: &mut BinaryHeap<Candidate<T>>, d: f64, item: T| {
            seq += 1;
            if heap.len() < k {
                heap.push(Candidate { dist: d, seq, item });
            } else if d < heap.peek().map(|c| c.dist).unwrap_or(f64::INFINITY) {
                heap.pop();
                heap.push(Candidate { dist: d, seq, item });
            }
        };
        for e in &self.buffer {
            offer(&mut heap, self.dist(&q, &e.point), e.item);
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        for tree in self.levels.iter().flatten() {
            stack.push(0);
            while let Some(id) = stack.pop() {
                let node = &tree.nodes[id as usize];
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map(|c| c.dist).unwrap_or(f64::INFINITY)
                };
                if self.metric.lower_bound_to_box(&q[..n], &node.lo[..n], &node.hi[..n]) > bound {
                    continue;
                }
                if node.left == NO_CHILD {
                    for e in &tree.entries[node.start as usize..node.end as usize] {
                        offer(&mut heap, self.dist(&q, &e.point), e.item);
                    }
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        let mut out: Vec<Candidate<T>> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.item, c.dist)).collect()
    }
}
