//! Small exact k-d tree for the preprocessing-time nearest neighbor search.

use nalgebra::Vector3;

struct Node {
    /// Index into the point array.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Exact kNN over a fixed point set. Built once per scan; queries return
/// indices sorted by ascending distance (ties by index).
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    nodes: Vec<Node>,
    root: i32,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order[..], 0, &mut nodes);
        Self { points, nodes, root }
    }

    fn build_rec(points: &[Vector3<f64>], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if order.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        // Median split; ties broken by index so the tree is deterministic.
        order.select_nth_unstable_by(mid, |&a, &b| {
            let (pa, pb) = (points[a as usize][axis as usize], points[b as usize][axis as usize]);
            pa.partial_cmp(&pb).unwrap().then(a.cmp(&b))
        });
        let point = order[mid];
        let (lo, hi) = order.split_at_mut(mid);
        let hi = &mut hi[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes.push(Node { point, axis, left, right });
        (nodes.len() - 1) as i32
    }

    /// Exact k nearest neighbors of `query` (the query point itself is a
    /// member of the set and is returned like any other point).
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<u32> {
        // Bounded max-heap as a sorted vec; k is small (~10).
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, &mut best);
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(&self, node: i32, query: &Vector3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        let entry = (d2, n.point);
        let pos = best
            .binary_search_by(|probe| {
                probe.0.partial_cmp(&entry.0).unwrap().then(probe.1.cmp(&entry.1))
            })
            .unwrap_or_else(|e| e);
        best.insert(pos, entry);
        if best.len() > k {
            best.pop();
        }

        let axis = n.axis as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, query, k, best);
        if best.len() < k || delta * delta < best[best.len() - 1].0 {
            self.search(far, query, k, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force_knn(points: &[Vector3<f64>], query: &Vector3<f64>, k: usize) -> Vec<u32> {
        let mut d: Vec<(f64, u32)> =
            points.iter().enumerate().map(|(i, p)| ((p - query).norm_squared(), i as u32)).collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        d.truncate(k);
        d.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(42);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let tree = KdTree::build(&points);
        for i in 0..points.len() {
            let got = tree.knn(&points[i], 10);
            let want = brute_force_knn(&points, &points[i], 10);
            assert_eq!(got, want, "mismatch at query {i}");
        }
    }

    #[test]
    fn single_point_returns_itself() {
        let points = vec![Vector3::new(1.0, 2.0, 3.0)];
        let tree = KdTree::build(&points);
        assert_eq!(tree.knn(&points[0], 1), vec![0]);
    }
}
