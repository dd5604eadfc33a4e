use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist2, PointCloud};
use crate::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Aabb {
    fn min_dist2(&self, q: &[f64; 3]) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = if q[a] < self.lo[a] {
                self.lo[a] - q[a]
            } else if q[a] > self.hi[a] {
                q[a] - self.hi[a]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    fn max_dist2(&self, q: &[f64; 3]) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = (q[a] - self.lo[a]).abs().max((self.hi[a] - q[a]).abs());
            d += e * e;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        end: usize,
    },
    Inner {
        bounds: Aabb,
        start: usize,
        end: usize,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }

    fn range(&self) -> (usize, usize) {
        match *self {
            Node::Leaf { start, end, .. } | Node::Inner { start, end, .. } => (start, end),
        }
    }
}

/// Neighbour candidate ordered by `(squared distance, point index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact Euclidean k-d tree over a cloud.
///
/// Distance ties are broken by ascending point index, so every query is
/// reproducible and equal to an exhaustive sort by `(distance, index)`.
/// A point is never its own neighbour, but duplicates of it are.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if cloud.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("cloud too large to index".into()));
        }
        let points: Vec<[f64; 3]> = cloud.points().iter().map(|p| p.to_array()).collect();
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(&points, &mut order, 0, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.points.len() {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.points.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Rank of `y` among the neighbours of `x`: 1 for the nearest distinct
    /// point, N−1 for the farthest.
    pub fn rank(&self, x: usize, y: usize) -> Result<usize> {
        self.check(x)?;
        self.check(y)?;
        if x == y {
            return Err(Error::SelfRank(x));
        }
        let q = self.points[x];
        let key = Candidate {
            d2: dist2(&q, &self.points[y]),
            index: y as u32,
        };
        Ok(self.count_before(0, &q, x, &key) + 1)
    }

    fn count_before(&self, node: usize, q: &[f64; 3], exclude: usize, key: &Candidate) -> usize {
        let n = &self.nodes[node];
        let b = n.bounds();
        if b.min_dist2(q) > key.d2 {
            return 0;
        }
        let (start, end) = n.range();
        if b.max_dist2(q) < key.d2 {
            let contains_self = self.order[start..end].iter().any(|&i| i as usize == exclude);
            return end - start - usize::from(contains_self);
        }
        match *n {
            Node::Leaf { start, end, .. } => self.order[start..end]
                .iter()
                .filter(|&&i| {
                    i as usize != exclude
                        && Candidate {
                            d2: dist2(q, &self.points[i as usize]),
                            index: i,
                        } < *key
                })
                .count(),
            Node::Inner { left, right, .. } => {
                self.count_before(left, q, exclude, key) + self.count_before(right, q, exclude, key)
            }
        }
    }

    /// The `k` nearest distinct points of point `x`, nearest first, as
    /// `(index, squared distance)`. Fewer are returned if the cloud is
    /// smaller than `k + 1`.
    pub fn knn(&self, x: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        self.check(x)?;
        Ok(self.knn_at(&self.points[x], k, Some(x)))
    }

    /// k-nearest query at arbitrary coordinates, optionally excluding one index.
    pub fn knn_at(&self, q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.index as usize, c.d2)).collect()
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        if heap.len() == k {
            let worst = heap.peek().map(|c| c.d2).unwrap_or(f64::INFINITY);
            // Equal distance may still win on index, so prune only when strictly farther.
            if n.bounds().min_dist2(q) > worst {
                return;
            }
        }
        match *n {
            Node::Leaf { start, end, .. } => {
                for &i in &self.order[start..end] {
                    if Some(i as usize) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        d2: dist2(q, &self.points[i as usize]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Inner { left, right, .. } => {
                let dl = self.nodes[left].bounds().min_dist2(q);
                let dr = self.nodes[right].bounds().min_dist2(q);
                let (first, second) = if dl <= dr { (left, right) } else { (right, left) };
                self.knn_rec(first, q, k, exclude, heap);
                self.knn_rec(second, q, k, exclude, heap);
            }
        }
    }

    /// All points with squared distance `<= radius²` from `q`, sorted by
    /// `(distance, index)`.
    pub fn within_radius(&self, q: &[f64; 3], radius: f64, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let n = &self.nodes[node];
            if n.bounds().min_dist2(q) > r2 {
                continue;
            }
            match *n {
                Node::Leaf { start, end, .. } => {
                    for &i in &self.order[start..end] {
                        if Some(i as usize) == exclude {
                            continue;
                        }
                        let d2 = dist2(q, &self.points[i as usize]);
                        if d2 <= r2 {
                            out.push(Candidate { d2, index: i });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out.sort_unstable();
        out.into_iter().map(|c| (c.index as usize, c.d2)).collect()
    }
}

fn bounds_of(points: &[[f64; 3]], idx: &[u32]) -> Aabb {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Aabb { lo, hi }
}

fn build_node(points: &[[f64; 3]], idx: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let bounds = bounds_of(points, idx);
    let id = nodes.len();
    let (start, end) = (offset, offset + idx.len());
    if idx.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (bounds.hi[a] - bounds.lo[a]).total_cmp(&(bounds.hi[b] - bounds.lo[b])))
        .unwrap_or(0);
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let (l, r) = idx.split_at_mut(mid);
    let left = build_node(points, l, offset, nodes);
    let right = build_node(points, r, offset + mid, nodes);
    nodes[id] = Node::Inner {
        bounds,
        start,
        end,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: sort every other point by (distance, index).
    fn sorted_neighbors(points: &[[f64; 3]], x: usize) -> Vec<usize> {
        let mut others: Vec<(f64, usize)> = (0..points.len())
            .filter(|&j| j != x)
            .map(|j| (dist2(&points[x], &points[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.into_iter().map(|(_, j)| j).collect()
    }

    fn oracle_rank(points: &[[f64; 3]], x: usize, y: usize) -> usize {
        sorted_neighbors(points, x).iter().position(|&j| j == y).unwrap() + 1
    }

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn index_of(points: &[[f64; 3]]) -> NeighborIndex {
        NeighborIndex::build(&PointCloud::from_arrays("t", points).unwrap()).unwrap()
    }

    #[test]
    fn empty_cloud_errors() {
        let err = NeighborIndex::build(&PointCloud::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty cloud");
    }

    #[test]
    fn single_point_has_no_ranks() {
        let idx = index_of(&[[0.0, 0.0, 0.0]]);
        assert!(idx.rank(0, 0).is_err());
        assert!(idx.rank(0, 1).is_err());
        assert!(idx.knn(0, 3).unwrap().is_empty());
    }

    #[test]
    fn three_point_line() {
        let idx = index_of(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(idx.rank(0, 1).unwrap(), 1);
        assert_eq!(idx.rank(0, 2).unwrap(), 2);
        assert_eq!(idx.rank(2, 1).unwrap(), 1);
        assert_eq!(idx.rank(2, 0).unwrap(), 2);
        assert!(matches!(idx.rank(1, 1), Err(Error::SelfRank(1))));
    }

    #[test]
    fn ties_break_by_index() {
        // 1, 2 and 3 are all at distance 1 from 0; 4 duplicates 0.
        let idx = index_of(&[
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0],
        ]);
        assert_eq!(idx.rank(0, 4).unwrap(), 1);
        assert_eq!(idx.rank(0, 1).unwrap(), 2);
        assert_eq!(idx.rank(0, 2).unwrap(), 3);
        assert_eq!(idx.rank(0, 3).unwrap(), 4);
        let nn: Vec<usize> = idx.knn(0, 3).unwrap().into_iter().map(|(i, _)| i).collect();
        assert_eq!(nn, vec![4, 1, 2]);
    }

    #[test]
    fn rank_matches_exhaustive_sort_on_1000_points() {
        let pts = random_points(1000, 42);
        let idx = index_of(&pts);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let x = rng.random_range(0..pts.len());
            let mut y = rng.random_range(0..pts.len());
            while y == x {
                y = rng.random_range(0..pts.len());
            }
            assert_eq!(idx.rank(x, y).unwrap(), oracle_rank(&pts, x, y));
        }
    }

    #[test]
    fn rank_matches_exhaustive_sort_on_200_points() {
        let pts = random_points(200, 9);
        let idx = index_of(&pts);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let x = rng.random_range(0..pts.len());
            let y = (x + rng.random_range(1..pts.len())) % pts.len();
            assert_eq!(idx.rank(x, y).unwrap(), oracle_rank(&pts, x, y));
        }
    }

    #[test]
    fn knn_matches_exhaustive_sort_with_duplicates() {
        // Coarse grid coordinates force plenty of exact ties.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<[f64; 3]> = (0..300)
            .map(|_| {
                [
                    rng.random_range(0..4) as f64,
                    rng.random_range(0..4) as f64,
                    rng.random_range(0..4) as f64,
                ]
            })
            .collect();
        let idx = index_of(&pts);
        for x in (0..pts.len()).step_by(7) {
            let got: Vec<usize> = idx.knn(x, 40).unwrap().into_iter().map(|(i, _)| i).collect();
            let want: Vec<usize> = sorted_neighbors(&pts, x).into_iter().take(40).collect();
            assert_eq!(got, want);
            for (r, &y) in want.iter().enumerate().take(10) {
                assert_eq!(idx.rank(x, y).unwrap(), r + 1);
            }
        }
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let pts = random_points(500, 5);
        let idx = index_of(&pts);
        for x in [0usize, 17, 250, 499] {
            let got: Vec<usize> = idx.within_radius(&pts[x], 0.3, Some(x)).into_iter().map(|(i, _)| i).collect();
            let want: Vec<usize> = sorted_neighbors(&pts, x)
                .into_iter()
                .filter(|&j| dist2(&pts[x], &pts[j]) <= 0.09)
                .collect();
            assert_eq!(got, want);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rank_is_a_bijection(coords in prop::collection::vec((-5i32..5, -5i32..5, -5i32..5), 2..40)) {
            let pts: Vec<[f64; 3]> = coords.iter().map(|&(a, b, c)| [a as f64 * 0.5, b as f64, c as f64]).collect();
            let cloud = PointCloud::new("p", pts.iter().copied().map(Point3::from).collect()).unwrap();
            let idx = NeighborIndex::build(&cloud).unwrap();
            let n = pts.len();
            for x in 0..n {
                let mut seen = vec![false; n];
                for y in (0..n).filter(|&y| y != x) {
                    let r = idx.rank(x, y).unwrap();
                    prop_assert!(r >= 1 && r < n);
                    prop_assert!(!seen[r]);
                    seen[r] = true;
                    prop_assert_eq!(r, oracle_rank(&pts, x, y));
                }
            }
        }
    }
}
