use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::Vec3;

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Static 3-d tree over a borrowed point slice, for k-nearest queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<u32>,
    root: Node,
}

fn coord(p: Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

#[derive(PartialEq)]
struct Candidate(f64);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let root = Self::build(points, &mut order, 0);
        Self { points, order, root }
    }

    fn build(points: &[Vec3], order: &mut [u32], offset: usize) -> Node {
        if order.len() <= LEAF_SIZE {
            return Node::Leaf {
                start: offset,
                end: offset + order.len(),
            };
        }
        let (lo, hi) = order.iter().fold(
            (Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY)),
            |(lo, hi), &i| (lo.min(points[i as usize]), hi.max(points[i as usize])),
        );
        let spread = hi - lo;
        let axis = if spread.x >= spread.y && spread.x >= spread.z {
            0
        } else if spread.y >= spread.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            coord(points[a as usize], axis).total_cmp(&coord(points[b as usize], axis))
        });
        let value = coord(points[order[mid] as usize], axis);
        let (left, right) = order.split_at_mut(mid);
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build(points, left, offset)),
            right: Box::new(Self::build(points, right, offset + mid)),
        }
    }

    /// Distance from `query` to its k-th nearest point, counting a point at
    /// distance zero (itself) as the first. Returns the farthest distance
    /// when fewer than `k` points exist.
    pub fn kth_distance(&self, query: Vec3, k: usize) -> f64 {
        let k = k.clamp(1, self.points.len().max(1));
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, &mut heap);
        heap.peek().map_or(0.0, |c| c.0)
    }

    fn search(&self, node: &Node, q: Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = q.distance(self.points[i as usize]);
                    if heap.len() < k {
                        heap.push(Candidate(d));
                    } else if d < heap.peek().unwrap().0 {
                        heap.pop();
                        heap.push(Candidate(d));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = coord(q, *axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                if heap.len() < k || diff.abs() <= heap.peek().unwrap().0 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
