//! Minimal kd-tree for nearest-neighbor and k-nearest queries.
//!
//! Ties on equal distance are broken toward the lower point index, so query
//! results are deterministic and match the brute-force oracle ordering.

use crate::shape::Vec3;

pub struct KdTree {
    nodes: Vec<Node>,
    points: Vec<Vec3>,
    root: Option<usize>,
}

struct Node {
    point_idx: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            points: points.to_vec(),
            root: None,
        };
        tree.root = tree.build_rec(&mut indices, 0);
        tree
    }

    fn build_rec(&mut self, indices: &mut [usize], depth: usize) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a][axis]
                .total_cmp(&self.points[b][axis])
                .then(a.cmp(&b))
        });
        let point_idx = indices[mid];
        let node_idx = self.nodes.len();
        self.nodes.push(Node {
            point_idx,
            axis,
            left: None,
            right: None,
        });
        // split the borrow: rebuild the two halves after pushing the node
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[node_idx].left = left;
        self.nodes[node_idx].right = right;
        Some(node_idx)
    }

    /// Index and squared distance of the nearest point to `query`.
    pub fn nearest(&self, query: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, usize::MAX, &mut best);
        best
    }

    /// Nearest point excluding index `skip` (for self-queries).
    pub fn nearest_excluding(&self, query: Vec3, skip: usize) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, skip, &mut best);
        best
    }

    fn nearest_rec(&self, node: Option<usize>, query: Vec3, skip: usize, best: &mut (usize, f64)) {
        let Some(ni) = node else { return };
        let node = &self.nodes[ni];
        let p = self.points[node.point_idx];
        if node.point_idx != skip {
            let d2 = (p - query).norm_squared();
            if d2 < best.1 || (d2 == best.1 && node.point_idx < best.0) {
                *best = (node.point_idx, d2);
            }
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.nearest_rec(near, query, skip, best);
        if diff * diff <= best.1 {
            self.nearest_rec(far, query, skip, best);
        }
    }

    /// Indices of the `min(k, n-1)` nearest points to point `skip`, sorted by
    /// ascending distance (ties by lower index), excluding `skip` itself.
    pub fn knn_excluding(&self, query: Vec3, k: usize, skip: usize) -> Vec<usize> {
        // bounded worst-candidate list kept sorted; k is small in practice
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, query, k, skip, &mut heap);
        heap.into_iter().map(|(_, i)| i).collect()
    }

    fn knn_rec(
        &self,
        node: Option<usize>,
        query: Vec3,
        k: usize,
        skip: usize,
        heap: &mut Vec<(f64, usize)>,
    ) {
        let Some(ni) = node else { return };
        let node = &self.nodes[ni];
        let p = self.points[node.point_idx];
        if node.point_idx != skip {
            let d2 = (p - query).norm_squared();
            let cand = (d2, node.point_idx);
            let pos = heap.partition_point(|&(d, i)| d < d2 || (d == d2 && i < cand.1));
            if pos < k {
                heap.insert(pos, cand);
                heap.truncate(k);
            }
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.knn_rec(near, query, k, skip, heap);
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.last().map(|&(d, _)| d).unwrap_or(f64::INFINITY)
        };
        if diff * diff <= worst {
            self.knn_rec(far, query, k, skip, heap);
        }
    }
}
