//! Static kd-tree over 3-D points.
//!
//! Built once, queried read-only afterwards. Queries return squared
//! distances and break distance ties by point index so results are
//! deterministic.

use nalgebra::Vector3;

const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

/// kd-tree over a fixed set of points.
#[derive(Debug, Clone)]
pub struct KdTree {
    pts: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    /// Builds from a point slice. Point indices in query results refer to
    /// positions in this slice. Empty input yields an empty tree.
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let pts: Vec<Vector3<f64>> = points.to_vec();
        let mut order: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::with_capacity(pts.len());
        let root = Self::build_rec(&pts, &mut order[..], 0, &mut nodes);
        KdTree { pts, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    fn build_rec(pts: &[Vector3<f64>], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
        if order.is_empty() {
            return NO_CHILD;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        // Median split; index tiebreak keeps the partition deterministic.
        order.select_nth_unstable_by(mid, |&a, &b| {
            pts[a as usize][axis as usize]
                .total_cmp(&pts[b as usize][axis as usize])
                .then(a.cmp(&b))
        });
        let point = order[mid];
        let id = nodes.len() as u32;
        nodes.push(Node {
            point,
            axis,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(pts, lo, depth + 1, nodes);
        let right = Self::build_rec(pts, hi, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    /// The `k` nearest points to `query`, sorted by squared distance
    /// ascending (ties by index). Returns fewer when the tree is smaller.
    pub fn nearest_k(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.pts.is_empty() {
            return Vec::new();
        }
        // Max-heap of the current best k, keyed by (dist2, index).
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.nearest_rec(self.root, query, k, &mut heap);
        heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn heap_push(heap: &mut Vec<(f64, usize)>, k: usize, entry: (f64, usize)) {
        heap.push(entry);
        heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if heap.len() > k {
            heap.pop();
        }
    }

    fn worst(heap: &[(f64, usize)], k: usize) -> f64 {
        if heap.len() < k {
            f64::INFINITY
        } else {
            heap[heap.len() - 1].0
        }
    }

    fn nearest_rec(&self, node: u32, query: &Vector3<f64>, k: usize, heap: &mut Vec<(f64, usize)>) {
        if node == NO_CHILD {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.pts[n.point as usize];
        let d2 = (p - query).norm_squared();
        Self::heap_push(heap, k, (d2, n.point as usize));

        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, k, heap);
        if delta * delta < Self::worst(heap, k) {
            self.nearest_rec(far, query, k, heap);
        }
    }

    /// All points with squared distance to `query` at most `radius2`,
    /// sorted by index.
    pub fn within_radius(&self, query: &Vector3<f64>, radius2: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_rec(self.root, query, radius2, &mut out);
        out.sort_by_key(|&(i, _)| i);
        out
    }

    fn radius_rec(&self, node: u32, query: &Vector3<f64>, radius2: f64, out: &mut Vec<(usize, f64)>) {
        if node == NO_CHILD {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.pts[n.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 <= radius2 {
            out.push((n.point as usize, d2));
        }
        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.radius_rec(near, query, radius2, out);
        if delta * delta <= radius2 {
            self.radius_rec(far, query, radius2, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_points(n: usize, stream: u64) -> Vec<Vector3<f64>> {
        let mut r = substream(11, stream);
        (0..n)
            .map(|_| Vector3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>()))
            .collect()
    }

    fn brute_nearest_k(pts: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn nearest_k_matches_brute_force() {
        let pts = random_points(400, 0);
        let tree = KdTree::build(&pts);
        let mut r = substream(11, 1);
        for _ in 0..50 {
            let q = Vector3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
            for k in [1, 5, 25] {
                assert_eq!(tree.nearest_k(&q, k), brute_nearest_k(&pts, &q, k));
            }
        }
    }

    #[test]
    fn within_radius_matches_brute_force() {
        let pts = random_points(300, 2);
        let tree = KdTree::build(&pts);
        let mut r = substream(11, 3);
        for _ in 0..50 {
            let q = Vector3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
            let r2 = 0.05 + 0.1 * r.random::<f64>();
            let mut want: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - &q).norm_squared()))
                .filter(|&(_, d2)| d2 <= r2)
                .collect();
            want.sort_by_key(|&(i, _)| i);
            assert_eq!(tree.within_radius(&q, r2), want);
        }
    }

    #[test]
    fn duplicate_points_are_all_found() {
        let mut pts = random_points(10, 4);
        let dup = pts[3];
        pts.push(dup);
        pts.push(dup);
        let tree = KdTree::build(&pts);
        let hits = tree.within_radius(&dup, 0.0);
        let idx: Vec<usize> = hits.iter().map(|&(i, _)| i).collect();
        assert_eq!(idx, vec![3, 10, 11]);
    }

    #[test]
    fn empty_and_small_trees() {
        let tree = KdTree::build(&[]);
        assert!(tree.is_empty());
        assert!(tree.nearest_k(&Vector3::zeros(), 3).is_empty());

        let one = KdTree::build(&[Vector3::new(1.0, 2.0, 3.0)]);
        let got = one.nearest_k(&Vector3::zeros(), 5);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, 0);
    }
}
