//! Static kd-tree over 3D points with exact, deterministically ordered
//! k-nearest-neighbor queries, plus farthest-point sampling.
//!
//! Neighbors are ordered by `(squared distance, index)`, so results agree
//! exactly with a brute-force scan using the same ordering, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, nearest first.
    pub fn knn(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    pub fn nearest(&self, query: &Point3) -> Neighbor {
        self.knn(query, 1)[0]
    }

    fn search(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist_sq: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                // Points equal to the split value may sit on either side, so
                // the far side is visited on ties.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Greedy farthest-point sampling of `min(count, n)` indices starting at
/// `seed_index`, in selection order, so any prefix is itself a farthest-point
/// sample. Ties on the running maximum go to the lowest index.
pub fn farthest_point_sampling(points: &[Point3], count: usize, seed_index: usize) -> Vec<usize> {
    let n = points.len();
    let count = count.min(n);
    let mut chosen = Vec::with_capacity(count);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = seed_index;
    for _ in 0..count {
        chosen.push(current);
        dist[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist_sq: (p - q).norm_squared(),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_brute_force_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 5, 13, 100, 500] {
            let pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let tree = KdTree::new(&pts);
            for _ in 0..30 {
                let q = Point3::new(rng.random(), rng.random(), rng.random());
                for k in [1, 3, 10, 64] {
                    assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
                }
            }
        }
    }

    #[test]
    fn knn_ties_on_grid_break_by_index() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..6 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let tree = KdTree::new(&pts);
        for (i, q) in pts.iter().enumerate().step_by(7) {
            let got = tree.knn(q, 19);
            assert_eq!(got, brute_knn(&pts, q, 19));
            assert_eq!(got[0].index, i);
        }
    }

    #[test]
    fn duplicate_points_are_handled() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 40];
        let tree = KdTree::new(&pts);
        let got = tree.knn(&Point3::zeros(), 5);
        assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_covers_extremes() {
        let pts: Vec<Point3> = (0..11).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let s = farthest_point_sampling(&pts, 3, 0);
        assert_eq!(s, vec![0, 10, 5]);
        let all = farthest_point_sampling(&pts, 20, 0);
        assert_eq!(&all[..3], &[0, 10, 5]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..11).collect::<Vec<_>>());

        let dup = vec![Point3::zeros(); 4];
        assert_eq!(farthest_point_sampling(&dup, 4, 2), vec![2, 0, 1, 3]);
    }
}
