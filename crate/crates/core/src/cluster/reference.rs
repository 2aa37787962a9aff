//! Quadratic-memory reference HDBSCAN used to cross-check [`super::hdbscan`].
//!
//! Every stage is computed the slow, literal way: a full distance matrix,
//! core distances by sorting rows, Kruskal over all pairs, and the condensed
//! tree built by repeatedly cutting the heaviest spanning-tree edge out of
//! explicit point sets.

use super::hdbscan::{canonical_labels, lambda, ClusterResult, Edge, HdbscanConfig};
use crate::model::Vec3;

struct Cluster {
    parent: Option<usize>,
    birth: f64,
    children: Vec<usize>,
    /// (lambda, size) for each point or child cluster leaving this cluster.
    departures: Vec<(f64, usize)>,
}

pub fn hdbscan_reference(points: &[Vec3], cfg: &HdbscanConfig) -> ClusterResult {
    let n = points.len();
    if n < cfg.min_cluster_size.max(2) {
        return ClusterResult::all_noise(n);
    }
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|p| points.iter().map(|q| p.distance(*q)).collect())
        .collect();
    let k = cfg.min_samples.clamp(1, n);
    let core: Vec<f64> = dist
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[k - 1]
        })
        .collect();

    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let w = dist[i][j].max(core[i]).max(core[j]);
            all.push(Edge::new(i as u32, j as u32, w));
        }
    }
    all.sort_by(Edge::key_cmp);
    let mut comp: Vec<usize> = (0..n).collect();
    let mut mst: Vec<Edge> = Vec::with_capacity(n - 1);
    for e in all {
        let (ca, cb) = (comp[e.a as usize], comp[e.b as usize]);
        if ca != cb {
            for c in comp.iter_mut() {
                if *c == cb {
                    *c = ca;
                }
            }
            mst.push(e);
            if mst.len() == n - 1 {
                break;
            }
        }
    }

    let mcs = cfg.min_cluster_size;
    let mut clusters = vec![Cluster {
        parent: None,
        birth: 0.0,
        children: Vec::new(),
        departures: Vec::new(),
    }];
    let mut point_owner: Vec<usize> = vec![0; n];
    // (cluster id, point set, spanning edges of that set)
    let mut work: Vec<(usize, Vec<u32>, Vec<Edge>)> = vec![(0, (0..n as u32).collect(), mst)];
    while let Some((cid, members, mut edges)) = work.pop() {
        if edges.is_empty() {
            // A lone point of a still-live cluster: cannot happen for sizes >= 2.
            continue;
        }
        let heaviest = (0..edges.len())
            .max_by(|&x, &y| edges[x].key_cmp(&edges[y]))
            .unwrap();
        let cut = edges.swap_remove(heaviest);
        let lam = lambda(cut.weight);

        let side_a = reachable(cut.a, &edges);
        let (a_pts, b_pts): (Vec<u32>, Vec<u32>) = members.iter().partition(|p| side_a.contains(p));
        let (a_edges, b_edges): (Vec<Edge>, Vec<Edge>) =
            edges.into_iter().partition(|e| side_a.contains(&e.a));

        let big_a = a_pts.len() >= mcs;
        let big_b = b_pts.len() >= mcs;
        if big_a && big_b {
            for (pts, es) in [(a_pts, a_edges), (b_pts, b_edges)] {
                let child = clusters.len();
                clusters.push(Cluster {
                    parent: Some(cid),
                    birth: lam,
                    children: Vec::new(),
                    departures: Vec::new(),
                });
                clusters[cid].children.push(child);
                clusters[cid].departures.push((lam, pts.len()));
                work.push((child, pts, es));
            }
            continue;
        }
        let mut leave = |pts: &[u32], clusters: &mut Vec<Cluster>| {
            for &p in pts {
                clusters[cid].departures.push((lam, 1));
                point_owner[p as usize] = cid;
            }
        };
        match (big_a, big_b) {
            (false, false) => {
                leave(&a_pts, &mut clusters);
                leave(&b_pts, &mut clusters);
            }
            (true, false) => {
                leave(&b_pts, &mut clusters);
                work.push((cid, a_pts, a_edges));
            }
            (false, true) => {
                leave(&a_pts, &mut clusters);
                work.push((cid, b_pts, b_edges));
            }
            (true, true) => unreachable!(),
        }
    }

    let stability: Vec<f64> = clusters
        .iter()
        .map(|c| c.departures.iter().map(|(l, s)| (l - c.birth) * *s as f64).sum())
        .collect();

    fn choose(c: usize, clusters: &[Cluster], stability: &[f64], out: &mut Vec<usize>) -> f64 {
        if clusters[c].children.is_empty() {
            out.push(c);
            return stability[c];
        }
        let mut below = Vec::new();
        let total: f64 = clusters[c]
            .children
            .iter()
            .map(|&k| choose(k, clusters, stability, &mut below))
            .sum();
        if total > stability[c] {
            out.extend(below);
            total
        } else {
            out.push(c);
            stability[c]
        }
    }
    let mut chosen = Vec::new();
    choose(0, &clusters, &stability, &mut chosen);

    let raw: Vec<Option<usize>> = point_owner
        .iter()
        .map(|&start| {
            let mut c = Some(start);
            while let Some(k) = c {
                if chosen.contains(&k) {
                    return Some(k);
                }
                c = clusters[k].parent;
            }
            None
        })
        .collect();
    canonical_labels(&raw)
}

fn reachable(start: u32, edges: &[Edge]) -> std::collections::HashSet<u32> {
    let mut adjacency: std::collections::HashMap<u32, Vec<u32>> = std::collections::HashMap::new();
    for e in edges {
        adjacency.entry(e.a).or_default().push(e.b);
        adjacency.entry(e.b).or_default().push(e.a);
    }
    let mut seen = std::collections::HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &other in adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(other) {
                stack.push(other);
            }
        }
    }
    seen
}
