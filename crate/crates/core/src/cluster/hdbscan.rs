//! HDBSCAN over 3-d points with Euclidean distance.
//!
//! Core distances come from a kd-tree; the mutual-reachability minimum
//! spanning tree is grown with dense Prim's (no n² matrix is stored). Edges
//! are totally ordered by `(weight, min endpoint, max endpoint)`, which makes
//! the tree unique and the result independent of traversal order. The
//! single-linkage hierarchy is condensed at `min_cluster_size` and clusters
//! are chosen by Excess of Mass, with the root eligible so a single dense
//! group comes back as one cluster.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::model::Vec3;

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdbscanConfig {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl Default for HdbscanConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 25,
            min_samples: 10,
        }
    }
}

impl HdbscanConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_cluster_size < 2 {
            return Err("min_cluster_size must be >= 2".into());
        }
        if self.min_samples < 1 {
            return Err("min_samples must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterResult {
    /// Cluster id per point (contiguous from 0, ordered by each cluster's
    /// smallest point index) or [`NOISE`].
    pub labels: Vec<i32>,
    pub cluster_count: usize,
}

impl ClusterResult {
    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![NOISE; n],
            cluster_count: 0,
        }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == NOISE).count()
    }

    /// Point indices of each cluster, in cluster id order.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i as u32);
            }
        }
        out
    }
}

/// Density level of a merge at distance `d`.
pub(crate) fn lambda(d: f64) -> f64 {
    1.0 / d.max(1e-300)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

impl Edge {
    pub(crate) fn new(u: u32, v: u32, weight: f64) -> Self {
        Self {
            a: u.min(v),
            b: u.max(v),
            weight,
        }
    }

    pub(crate) fn key_cmp(&self, o: &Edge) -> Ordering {
        self.weight
            .total_cmp(&o.weight)
            .then(self.a.cmp(&o.a))
            .then(self.b.cmp(&o.b))
    }
}

pub(crate) fn core_distances(points: &[Vec3], min_samples: usize) -> Vec<f64> {
    let tree = KdTree::new(points);
    points.iter().map(|p| tree.kth_distance(*p, min_samples)).collect()
}

fn prim_mst(points: &[Vec3], core: &[f64]) -> Vec<Edge> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<Edge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let (pc, cc) = (points[current], core[current]);
        let mut next: Option<(usize, Edge)> = None;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let w = pc.distance(points[v]).max(cc).max(core[v]);
            let cand = Edge::new(current as u32, v as u32, w);
            if best[v].is_none_or(|b| cand.key_cmp(&b) == Ordering::Less) {
                best[v] = Some(cand);
            }
            let bv = best[v].unwrap();
            if next.is_none_or(|(_, e)| bv.key_cmp(&e) == Ordering::Less) {
                next = Some((v, bv));
            }
        }
        let (v, e) = next.expect("graph is complete");
        in_tree[v] = true;
        edges.push(e);
        current = v;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Internal single-linkage node; children below `n` are points.
struct LinkNode {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn single_linkage(n: usize, sorted: &[Edge]) -> Vec<LinkNode> {
    // Union-find over 2n-1 node ids; each root maps to its current dendrogram node.
    let mut uf = UnionFind::new(2 * n - 1);
    let mut nodes = Vec::with_capacity(n - 1);
    let size_of = |nodes: &Vec<LinkNode>, id: usize| if id < n { 1 } else { nodes[id - n].size };
    for (k, e) in sorted.iter().enumerate() {
        let ra = uf.find(e.a as usize);
        let rb = uf.find(e.b as usize);
        let id = n + k;
        let size = size_of(&nodes, ra) + size_of(&nodes, rb);
        nodes.push(LinkNode {
            left: ra,
            right: rb,
            distance: e.weight,
            size,
        });
        uf.parent[ra] = id;
        uf.parent[rb] = id;
    }
    nodes
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Child {
    Point(u32),
    Cluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CondensedEntry {
    pub parent: usize,
    pub child: Child,
    pub lambda: f64,
    pub size: usize,
}

fn condense(n: usize, nodes: &[LinkNode], min_cluster_size: usize) -> (Vec<CondensedEntry>, usize) {
    let root = 2 * n - 2;
    let size_of = |id: usize| if id < n { 1 } else { nodes[id - n].size };
    let mut cluster_of = vec![usize::MAX; 2 * n - 1];
    cluster_of[root] = 0;
    let mut next_cluster = 1;
    let mut out = Vec::new();

    let leaves = |start: usize, acc: &mut Vec<u32>| {
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            if id < n {
                acc.push(id as u32);
            } else {
                stack.push(nodes[id - n].left);
                stack.push(nodes[id - n].right);
            }
        }
    };

    // Internal nodes whose cluster is known, visited top-down.
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(id) = queue.pop_front() {
        if id < n {
            continue;
        }
        let node = &nodes[id - n];
        let parent = cluster_of[id];
        let lam = lambda(node.distance);
        let (l, r) = (node.left, node.right);
        let (ls, rs) = (size_of(l), size_of(r));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        let fall_out = |side: usize, out: &mut Vec<CondensedEntry>| {
            let mut pts = Vec::new();
            leaves(side, &mut pts);
            out.extend(pts.into_iter().map(|p| CondensedEntry {
                parent,
                child: Child::Point(p),
                lambda: lam,
                size: 1,
            }));
        };
        match (big_l, big_r) {
            (true, true) => {
                for (side, size) in [(l, ls), (r, rs)] {
                    cluster_of[side] = next_cluster;
                    out.push(CondensedEntry {
                        parent,
                        child: Child::Cluster(next_cluster),
                        lambda: lam,
                        size,
                    });
                    next_cluster += 1;
                    queue.push_back(side);
                }
            }
            (false, false) => {
                fall_out(l, &mut out);
                fall_out(r, &mut out);
            }
            (true, false) => {
                fall_out(r, &mut out);
                cluster_of[l] = parent;
                queue.push_back(l);
            }
            (false, true) => {
                fall_out(l, &mut out);
                cluster_of[r] = parent;
                queue.push_back(r);
            }
        }
    }
    (out, next_cluster)
}

/// Excess-of-Mass selection over a condensed tree with `count` clusters.
fn select_clusters(tree: &[CondensedEntry], count: usize) -> Vec<bool> {
    let mut birth = vec![0.0; count];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    for e in tree {
        if let Child::Cluster(c) = e.child {
            birth[c] = e.lambda;
            children[e.parent].push(c);
        }
    }
    let mut stability = vec![0.0; count];
    for e in tree {
        stability[e.parent] += (e.lambda - birth[e.parent]) * e.size as f64;
    }
    let mut selected = vec![false; count];
    // Children always carry larger ids than their parent.
    for c in (0..count).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            stability[c] = subtree;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }
    selected
}

fn assign_labels(n: usize, tree: &[CondensedEntry], count: usize, selected: &[bool]) -> ClusterResult {
    let mut parent_of = vec![usize::MAX; count];
    for e in tree {
        if let Child::Cluster(c) = e.child {
            parent_of[c] = e.parent;
        }
    }
    let owner = |mut c: usize| -> Option<usize> {
        loop {
            if selected[c] {
                return Some(c);
            }
            if parent_of[c] == usize::MAX {
                return None;
            }
            c = parent_of[c];
        }
    };
    let mut raw = vec![None; n];
    for e in tree {
        if let Child::Point(p) = e.child {
            raw[p as usize] = owner(e.parent);
        }
    }
    canonical_labels(&raw)
}

/// Renumbers cluster ids by smallest member index.
pub(crate) fn canonical_labels(raw: &[Option<usize>]) -> ClusterResult {
    let mut remap: std::collections::HashMap<usize, i32> = std::collections::HashMap::new();
    let labels = raw
        .iter()
        .map(|c| match c {
            None => NOISE,
            Some(c) => {
                let next = remap.len() as i32;
                *remap.entry(*c).or_insert(next)
            }
        })
        .collect();
    ClusterResult {
        labels,
        cluster_count: remap.len(),
    }
}

pub fn hdbscan(points: &[Vec3], cfg: &HdbscanConfig) -> ClusterResult {
    let n = points.len();
    if n < cfg.min_cluster_size.max(2) {
        return ClusterResult::all_noise(n);
    }
    let core = core_distances(points, cfg.min_samples);
    let mut mst = prim_mst(points, &core);
    mst.sort_by(Edge::key_cmp);
    let nodes = single_linkage(n, &mst);
    let (tree, count) = condense(n, &nodes, cfg.min_cluster_size);
    let selected = select_clusters(&tree, count);
    assign_labels(n, &tree, count, &selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blob(rng: &mut ChaCha8Rng, center: Vec3, sigma: f64, n: usize) -> Vec<Vec3> {
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| center + Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng)))
            .collect()
    }

    #[test]
    fn two_blobs_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(&mut rng, Vec3::ZERO, 0.1, 100);
        pts.extend(blob(&mut rng, Vec3::new(10.0, 0.0, 0.0), 0.1, 100));
        let r = hdbscan(&pts, &HdbscanConfig::default());
        assert_eq!(r.cluster_count, 2);
        assert_eq!(r.noise_count(), 0);
        assert!(r.labels[..100].iter().all(|l| *l == 0));
        assert!(r.labels[100..].iter().all(|l| *l == 1));
    }

    #[test]
    fn below_min_cluster_size_is_noise() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let r = hdbscan(&pts, &HdbscanConfig::default());
        assert_eq!(r, ClusterResult::all_noise(10));
    }

    #[test]
    fn single_blob_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob(&mut rng, Vec3::new(1.0, 2.0, 3.0), 0.2, 200);
        let r = hdbscan(&pts, &HdbscanConfig::default());
        assert_eq!(r.cluster_count, 1);
    }

    #[test]
    fn duplicate_points_do_not_break_levels() {
        let mut pts = vec![Vec3::ZERO; 40];
        pts.extend(vec![Vec3::new(5.0, 0.0, 0.0); 40]);
        let r = hdbscan(&pts, &HdbscanConfig::default());
        assert_eq!(r.cluster_count, 2);
    }

    #[test]
    fn config_bounds() {
        assert!(HdbscanConfig { min_cluster_size: 1, min_samples: 1 }.validate().is_err());
        assert!(HdbscanConfig { min_cluster_size: 2, min_samples: 0 }.validate().is_err());
        assert!(HdbscanConfig::default().validate().is_ok());
    }
}
