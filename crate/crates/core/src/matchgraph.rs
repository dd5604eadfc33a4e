//! Pairwise graphical model over putative matches.
//!
//! Two matches `c_i = (p_i, q_i)` and `c_j = (p_j, q_j)` are *near* on a side
//! when their points there are mutual (k−1)-nearest neighbours, i.e.
//! `max(rank(a, b), rank(b, a)) < k`, and *far* when
//! `min(rank(a, b), rank(b, a)) > l`. They are compatible when near on both
//! sides, incompatible when near on one side and far on the other, and
//! unrelated otherwise. A shared endpoint counts as near.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::NeighborIndex;
use crate::matching::{observation, Correspondence, ObservationMessage, PriorMode};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_L: usize = 50;
pub const DEFAULT_LAMBDA_SAFETY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighborKind {
    Compatible,
    Incompatible,
    Unrelated,
}

impl NeighborKind {
    pub fn code(self) -> char {
        match self {
            NeighborKind::Compatible => 'C',
            NeighborKind::Incompatible => 'I',
            NeighborKind::Unrelated => 'U',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proximity {
    Near,
    Far,
    Between,
}

fn combine(p: Proximity, q: Proximity) -> NeighborKind {
    use Proximity::*;
    match (p, q) {
        (Near, Near) => NeighborKind::Compatible,
        (Near, Far) | (Far, Near) => NeighborKind::Incompatible,
        _ => NeighborKind::Unrelated,
    }
}

/// Rank thresholds and λ safety factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub l: usize,
    /// Fraction of the convergence bound used when picking λ, in (0, 1).
    pub lambda_safety: f64,
    pub prior: PriorMode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            l: DEFAULT_L,
            lambda_safety: DEFAULT_LAMBDA_SAFETY,
            prior: PriorMode::Uniform,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        check_kl(self.k, self.l)?;
        if !(self.lambda_safety > 0.0 && self.lambda_safety < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_safety must lie in (0, 1), got {}",
                self.lambda_safety
            )));
        }
        if let PriorMode::Distance { scale } = self.prior {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidParameter(format!("prior scale must be positive, got {scale}")));
            }
        }
        Ok(())
    }
}

fn check_kl(k: usize, l: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be at least 2, got {k}")));
    }
    if l <= k {
        return Err(Error::InvalidParameter(format!("l must exceed k (k = {k}, l = {l})")));
    }
    Ok(())
}

fn side_proximity(idx: &NeighborIndex, a: usize, b: usize, k: usize, l: usize) -> Result<Proximity> {
    if a == b {
        // rank() would reject the pair; still validate the index.
        idx.knn(a, 0)?;
        return Ok(Proximity::Near);
    }
    let r1 = idx.rank(a, b)?;
    let r2 = idx.rank(b, a)?;
    Ok(if r1.max(r2) < k {
        Proximity::Near
    } else if r1.min(r2) > l {
        Proximity::Far
    } else {
        Proximity::Between
    })
}

/// Classifies a pair of matches directly from rank queries.
pub fn classify_pair(
    ci: &Correspondence,
    cj: &Correspondence,
    idx_p: &NeighborIndex,
    idx_q: &NeighborIndex,
    k: usize,
    l: usize,
) -> Result<NeighborKind> {
    check_kl(k, l)?;
    if ci.p == cj.p && ci.q == cj.q {
        return Err(Error::InvalidParameter(format!(
            "cannot classify a match against itself ({}, {})",
            ci.p, ci.q
        )));
    }
    let p = side_proximity(idx_p, ci.p, cj.p, k, l)?;
    let q = side_proximity(idx_q, ci.q, cj.q, k, l)?;
    Ok(combine(p, q))
}

/// λ from the convergence bound `max_degree · ln λ < 2`:
/// `exp(2·safety / max(max_degree, 1))`.
pub fn select_lambda(max_degree: usize, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("safety must lie in (0, 1], got {safety}")));
    }
    Ok((2.0 * safety / max_degree.max(1) as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub correspondence: Correspondence,
    pub observation: ObservationMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub kind: NeighborKind,
}

/// Nodes, typed edges (canonical `i < j`, sorted) and the coupling λ.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    lambda: f64,
    k: usize,
    l: usize,
    /// Per node: `(neighbour, edge index)`, sorted by neighbour.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MatchGraph {
    /// Assembles a graph from explicit parts. Edges are canonicalised and
    /// sorted; self-loops, duplicates, `Unrelated` edges, out-of-range
    /// endpoints and `λ < 1` are rejected. The convergence bound is *not*
    /// enforced here, see [`MatchGraph::satisfies_convergence_bound`].
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>, lambda: f64, k: usize, l: usize) -> Result<Self> {
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 1, got {lambda}")));
        }
        let n = nodes.len();
        let mut canon = Vec::with_capacity(edges.len());
        let mut seen = HashSet::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j {
                return Err(Error::InvalidParameter(format!("self edge on node {}", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::IndexOutOfRange {
                    index: e.i.max(e.j),
                    len: n,
                });
            }
            if e.kind == NeighborKind::Unrelated {
                return Err(Error::InvalidParameter("unrelated pairs carry no edge".into()));
            }
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            if !seen.insert((i, j)) {
                return Err(Error::InvalidParameter(format!("duplicate edge ({i}, {j})")));
            }
            canon.push(Edge { i, j, kind: e.kind });
        }
        canon.sort_by_key(|e| (e.i, e.j));
        let mut adjacency = vec![Vec::new(); n];
        for (ei, e) in canon.iter().enumerate() {
            adjacency[e.i].push((e.j, ei));
            adjacency[e.j].push((e.i, ei));
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Self {
            nodes,
            edges: canon,
            lambda,
            k,
            l,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(neighbour, edge index)` pairs of node `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn satisfies_convergence_bound(&self) -> bool {
        (self.max_degree() as f64) * self.lambda.ln() < 2.0
    }

    /// Replaces λ, keeping the structure.
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 1, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.nodes.iter().map(|n| n.correspondence).collect()
    }

    /// Line-oriented text dump:
    ///
    /// ```text
    /// lambda <value> k <k> l <l>
    /// node <i> <p> <q> <obs_out> <obs_in>
    /// edge <i> <j> <C|I>
    /// ```
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda {} k {} l {}", self.lambda, self.k, self.l);
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "node {} {} {} {} {}",
                i, n.correspondence.p, n.correspondence.q, n.observation.outlier, n.observation.inlier
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge {} {} {}", e.i, e.j, e.kind.code());
        }
        s
    }
}

/// Sorted neighbour lists of depth `min(l, N−1)` for the points a match set
/// touches. Near/far tests reduce to list lookups.
struct RankTable {
    lists: HashMap<usize, Vec<u32>>,
    depth: usize,
}

impl RankTable {
    fn build(idx: &NeighborIndex, points: &HashSet<usize>, l: usize) -> Result<Self> {
        let depth = l.min(idx.len().saturating_sub(1));
        let mut pts: Vec<usize> = points.iter().copied().collect();
        pts.sort_unstable();
        let lists = pts
            .par_iter()
            .map(|&x| {
                let nn = idx.knn(x, depth)?;
                Ok((x, nn.into_iter().map(|(i, _)| i as u32).collect()))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self { lists, depth })
    }

    /// 1-based rank of `y` around `x` if it is within the table depth.
    fn rank(&self, x: usize, y: usize) -> Option<usize> {
        self.lists[&x].iter().position(|&v| v as usize == y).map(|r| r + 1)
    }

    fn proximity(&self, a: usize, b: usize, k: usize, l: usize) -> Proximity {
        if a == b {
            return Proximity::Near;
        }
        let (r1, r2) = (self.rank(a, b), self.rank(b, a));
        match (r1, r2) {
            (Some(x), Some(y)) if x.max(y) < k => Proximity::Near,
            // Absent from a full-depth list means rank > depth = l.
            (None, None) if self.depth == l => Proximity::Far,
            _ => Proximity::Between,
        }
    }

    fn near_points(&self, x: usize, k: usize) -> &[u32] {
        let list = &self.lists[&x];
        &list[..list.len().min(k - 1)]
    }
}

/// Builds the match graph. Candidate pairs come from the (k−1)-nearest
/// lists on either side, since every edge needs a near side; all `O(N²)`
/// pairs are never enumerated. λ is chosen by [`select_lambda`] from the
/// resulting maximum degree.
pub fn build_graph(
    matches: &[Correspondence],
    idx_p: &NeighborIndex,
    idx_q: &NeighborIndex,
    config: &GraphConfig,
) -> Result<MatchGraph> {
    config.validate()?;
    let (k, l) = (config.k, config.l);

    let mut seen = HashSet::with_capacity(matches.len());
    for c in matches {
        if c.p >= idx_p.len() {
            return Err(Error::IndexOutOfRange { index: c.p, len: idx_p.len() });
        }
        if c.q >= idx_q.len() {
            return Err(Error::IndexOutOfRange { index: c.q, len: idx_q.len() });
        }
        if !seen.insert((c.p, c.q)) {
            return Err(Error::InvalidParameter(format!("duplicate match ({}, {})", c.p, c.q)));
        }
    }

    let nodes = matches
        .iter()
        .map(|c| {
            Ok(Node {
                correspondence: *c,
                observation: observation(c, config.prior)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_p: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut by_q: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, c) in matches.iter().enumerate() {
        by_p.entry(c.p).or_default().push(i);
        by_q.entry(c.q).or_default().push(i);
    }
    let table_p = RankTable::build(idx_p, &by_p.keys().copied().collect(), l)?;
    let table_q = RankTable::build(idx_q, &by_q.keys().copied().collect(), l)?;

    let per_node: Vec<Vec<Edge>> = (0..matches.len())
        .into_par_iter()
        .map(|i| {
            let ci = &matches[i];
            let mut cand: Vec<usize> = Vec::new();
            let mut gather = |table: &RankTable, by: &HashMap<usize, Vec<usize>>, x: usize| {
                let own = std::iter::once(x as u32);
                for y in own.chain(table.near_points(x, k).iter().copied()) {
                    if let Some(js) = by.get(&(y as usize)) {
                        cand.extend(js.iter().copied().filter(|&j| j > i));
                    }
                }
            };
            gather(&table_p, &by_p, ci.p);
            gather(&table_q, &by_q, ci.q);
            cand.sort_unstable();
            cand.dedup();
            cand.into_iter()
                .filter_map(|j| {
                    let cj = &matches[j];
                    let kind = combine(
                        table_p.proximity(ci.p, cj.p, k, l),
                        table_q.proximity(ci.q, cj.q, k, l),
                    );
                    (kind != NeighborKind::Unrelated).then_some(Edge { i, j, kind })
                })
                .collect()
        })
        .collect();
    let edges: Vec<Edge> = per_node.into_iter().flatten().collect();

    let mut graph = MatchGraph::from_parts(nodes, edges, 1.0, k, l)?;
    graph.lambda = select_lambda(graph.max_degree(), config.lambda_safety)?;
    debug_assert!(graph.satisfies_convergence_bound());
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dist2, PointCloud};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn index(points: &[[f64; 3]]) -> NeighborIndex {
        NeighborIndex::build(&PointCloud::from_arrays("t", points).unwrap()).unwrap()
    }

    /// Exhaustive rank oracle, independent of the k-d tree.
    fn oracle_rank(points: &[[f64; 3]], x: usize, y: usize) -> usize {
        let d = dist2(&points[x], &points[y]);
        1 + (0..points.len())
            .filter(|&z| z != x)
            .filter(|&z| {
                let e = dist2(&points[x], &points[z]);
                e < d || (e == d && z < y)
            })
            .count()
    }

    fn cfg(k: usize, l: usize) -> GraphConfig {
        GraphConfig { k, l, ..GraphConfig::default() }
    }

    /// Eight filler points spread on a line far from the origin.
    fn filler(n: usize, x0: f64) -> Vec<[f64; 3]> {
        (0..n).map(|i| [x0 + i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn compatible_pair() {
        let mut p = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        p.extend(filler(8, 2.0));
        let q = p.clone();
        assert_eq!(oracle_rank(&p, 0, 1), 1);
        assert_eq!(oracle_rank(&p, 1, 0), 1);
        let kind = classify_pair(
            &Correspondence::new(0, 0, 0.0),
            &Correspondence::new(1, 1, 0.0),
            &index(&p),
            &index(&q),
            3,
            6,
        )
        .unwrap();
        assert_eq!(kind, NeighborKind::Compatible);
    }

    #[test]
    fn incompatible_pair() {
        let mut p = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        p.extend(filler(8, 2.0));
        // Q: q_j sits beyond all filler points, so it is the farthest point
        // from q_i and q_i is the farthest from q_j.
        let mut q = vec![[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]];
        q.extend(filler(8, 1.0));
        assert!(oracle_rank(&q, 0, 1).min(oracle_rank(&q, 1, 0)) > 6);
        let ci = Correspondence::new(0, 0, 0.0);
        let cj = Correspondence::new(1, 1, 0.0);
        let (ip, iq) = (index(&p), index(&q));
        assert_eq!(classify_pair(&ci, &cj, &ip, &iq, 3, 6).unwrap(), NeighborKind::Incompatible);
        assert_eq!(classify_pair(&cj, &ci, &ip, &iq, 3, 6).unwrap(), NeighborKind::Incompatible);
        // Swapping the clouds keeps the verdict.
        assert_eq!(classify_pair(&ci, &cj, &iq, &ip, 3, 6).unwrap(), NeighborKind::Incompatible);
    }

    #[test]
    fn unrelated_pair_in_the_gray_zone() {
        // Points on a line at 0, 1, 2, ...: neighbours 0 and 4 have ranks 4
        // from each side, between k = 3 and l = 6.
        let p = filler(10, 0.0);
        let q = p.clone();
        let r1 = oracle_rank(&p, 0, 4);
        let r2 = oracle_rank(&p, 4, 0);
        assert!(r1.max(r2) >= 3 && r1.min(r2) <= 6, "ranks {r1} {r2}");
        let kind = classify_pair(
            &Correspondence::new(0, 0, 0.0),
            &Correspondence::new(4, 4, 0.0),
            &index(&p),
            &index(&q),
            3,
            6,
        )
        .unwrap();
        assert_eq!(kind, NeighborKind::Unrelated);
    }

    #[test]
    fn classify_rejects_bad_input() {
        let p = filler(10, 0.0);
        let ip = index(&p);
        let a = Correspondence::new(0, 0, 0.0);
        assert!(classify_pair(&a, &Correspondence::new(42, 1, 0.0), &ip, &ip, 3, 6).is_err());
        assert!(classify_pair(&a, &a, &ip, &ip, 3, 6).is_err());
        assert!(classify_pair(&a, &Correspondence::new(1, 1, 0.0), &ip, &ip, 1, 6).is_err());
        assert!(classify_pair(&a, &Correspondence::new(1, 1, 0.0), &ip, &ip, 5, 5).is_err());
    }

    #[test]
    fn single_match_graph() {
        let p = filler(5, 0.0);
        let ip = index(&p);
        let g = build_graph(&[Correspondence::new(2, 3, 0.5)], &ip, &ip, &cfg(2, 3)).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
        assert!(g.lambda() > 1.0);
        assert!(g.satisfies_convergence_bound());
    }

    #[test]
    fn four_match_toy_scene() {
        // c1, c2 inliers close together; c4 an inlier far away; c3 pairs a
        // point next to p1 with a point on the far side of Q.
        let mut p = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [9.0, 9.0, 9.0]];
        let mut q = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [9.1, 9.0, 9.0], [9.0, 9.0, 9.0]];
        // Filler on a ring of radius 3..5 in both clouds.
        for i in 0..30 {
            let a = i as f64 * 0.21;
            let r = 3.0 + (i % 3) as f64;
            p.push([r * a.cos(), r * a.sin(), 4.5]);
            q.push([r * a.cos(), r * a.sin(), 4.5]);
        }
        let matches: Vec<Correspondence> = (0..4).map(|i| Correspondence::new(i, i, 0.0)).collect();
        let (ip, iq) = (index(&p), index(&q));
        let kind = |a: usize, b: usize| classify_pair(&matches[a], &matches[b], &ip, &iq, 3, 20).unwrap();
        assert_eq!(kind(0, 1), NeighborKind::Compatible);
        assert_eq!(kind(0, 2), NeighborKind::Incompatible);
        assert_eq!(kind(1, 3), NeighborKind::Unrelated);
        let g = build_graph(&matches, &ip, &iq, &cfg(3, 20)).unwrap();
        let kinds: HashMap<(usize, usize), NeighborKind> = g.edges().iter().map(|e| ((e.i, e.j), e.kind)).collect();
        assert_eq!(kinds.get(&(0, 1)), Some(&NeighborKind::Compatible));
        assert_eq!(kinds.get(&(0, 2)), Some(&NeighborKind::Incompatible));
        assert!(!kinds.contains_key(&(1, 3)));
    }

    #[test]
    fn select_lambda_values() {
        assert!((select_lambda(10, 1.0).unwrap() - 1.221402758160170).abs() < 1e-12);
        assert!((select_lambda(0, 0.95).unwrap() - (1.9f64).exp()).abs() < 1e-12);
        let l = select_lambda(20, 0.95).unwrap();
        assert!((l - 1.099659).abs() < 1e-6);
        assert!((20.0 * l.ln() - 1.9).abs() < 1e-12);
        assert!(select_lambda(3, 0.0).is_err());
        assert!(select_lambda(3, 1.5).is_err());
    }

    fn random_injective_scene(n_points: usize, n_matches: usize, seed: u64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<Correspondence>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<[f64; 3]> = (0..n_points).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        // Half the matches are "inliers" with slightly jittered partners.
        let q: Vec<[f64; 3]> = p
            .iter()
            .map(|x| [x[0] + rng.random_range(-0.01..0.01), x[1] + rng.random_range(-0.01..0.01), x[2]])
            .collect();
        let mut ps: Vec<usize> = (0..n_points).collect();
        let mut qs: Vec<usize> = (0..n_points).collect();
        ps.shuffle(&mut rng);
        qs.shuffle(&mut rng);
        let matches = (0..n_matches)
            .map(|i| {
                let q = if i % 2 == 0 { ps[i] } else { qs[i] };
                Correspondence::new(ps[i], q, 0.0)
            })
            .collect::<Vec<_>>();
        // Deduplicate q to keep the match set injective.
        let mut used = HashSet::new();
        let matches = matches.into_iter().filter(|c| used.insert(c.q)).collect();
        (p, q, matches)
    }

    #[test]
    fn edges_equal_all_pairs_classification() {
        let (p, q, matches) = random_injective_scene(500, 500, 17);
        let (ip, iq) = (index(&p), index(&q));
        let g = build_graph(&matches, &ip, &iq, &cfg(10, 50)).unwrap();
        let mut want = Vec::new();
        for i in 0..matches.len() {
            for j in i + 1..matches.len() {
                let kind = classify_pair(&matches[i], &matches[j], &ip, &iq, 10, 50).unwrap();
                if kind != NeighborKind::Unrelated {
                    want.push(Edge { i, j, kind });
                }
            }
        }
        assert_eq!(g.edges(), want.as_slice());
        assert!(g.edges().iter().any(|e| e.kind == NeighborKind::Compatible));
        assert!(g.edges().iter().any(|e| e.kind == NeighborKind::Incompatible));
        assert!(g.max_degree() <= 2 * (10 - 1));
        assert!(g.edges().len() <= 2 * 9 * g.len());
        assert!(g.satisfies_convergence_bound());
    }

    #[test]
    fn small_clouds_never_report_far() {
        // With fewer than l + 1 points no rank can exceed l.
        let (p, q, matches) = random_injective_scene(30, 30, 4);
        let (ip, iq) = (index(&p), index(&q));
        let g = build_graph(&matches, &ip, &iq, &cfg(4, 40)).unwrap();
        assert!(g.edges().iter().all(|e| e.kind == NeighborKind::Compatible));
    }

    #[test]
    fn graph_is_independent_of_match_order() {
        let (p, q, matches) = random_injective_scene(300, 300, 99);
        let (ip, iq) = (index(&p), index(&q));
        let g1 = build_graph(&matches, &ip, &iq, &cfg(6, 30)).unwrap();
        let mut shuffled = matches.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let g2 = build_graph(&shuffled, &ip, &iq, &cfg(6, 30)).unwrap();
        let as_set = |g: &MatchGraph| -> HashSet<((usize, usize), (usize, usize), NeighborKind)> {
            g.edges()
                .iter()
                .map(|e| {
                    let a = g.nodes()[e.i].correspondence;
                    let b = g.nodes()[e.j].correspondence;
                    let (a, b) = if (a.p, a.q) < (b.p, b.q) { (a, b) } else { (b, a) };
                    ((a.p, a.q), (b.p, b.q), e.kind)
                })
                .collect()
        };
        assert_eq!(as_set(&g1), as_set(&g2));
        assert_eq!(g1.lambda(), g2.lambda());
    }

    #[test]
    fn shared_endpoints_are_near() {
        // Two matches from the same P point: near in P. Their Q points are
        // at opposite ends of the cloud, hence far.
        let pts = filler(60, 0.0);
        let ip = index(&pts);
        let m = [Correspondence::new(5, 0, 0.0), Correspondence::new(5, 59, 0.0)];
        let kind = classify_pair(&m[0], &m[1], &ip, &ip, 3, 20).unwrap();
        assert_eq!(kind, NeighborKind::Incompatible);
        let g = build_graph(&m, &ip, &ip, &cfg(3, 20)).unwrap();
        assert_eq!(g.edges(), &[Edge { i: 0, j: 1, kind: NeighborKind::Incompatible }]);
    }

    #[test]
    fn duplicate_matches_rejected() {
        let pts = filler(10, 0.0);
        let ip = index(&pts);
        let m = [Correspondence::new(1, 1, 0.0), Correspondence::new(1, 1, 0.3)];
        assert!(build_graph(&m, &ip, &ip, &cfg(3, 6)).is_err());
        assert!(build_graph(&[Correspondence::new(10, 1, 0.0)], &ip, &ip, &cfg(3, 6)).is_err());
    }

    #[test]
    fn from_parts_validation() {
        let node = Node { correspondence: Correspondence::new(0, 0, 0.0), observation: ObservationMessage::UNIFORM };
        let nodes = vec![node; 3];
        let e = |i, j, kind| Edge { i, j, kind };
        assert!(MatchGraph::from_parts(nodes.clone(), vec![e(0, 0, NeighborKind::Compatible)], 1.1, 2, 3).is_err());
        assert!(MatchGraph::from_parts(nodes.clone(), vec![e(0, 1, NeighborKind::Compatible), e(1, 0, NeighborKind::Incompatible)], 1.1, 2, 3).is_err());
        assert!(MatchGraph::from_parts(nodes.clone(), vec![e(0, 5, NeighborKind::Compatible)], 1.1, 2, 3).is_err());
        assert!(MatchGraph::from_parts(nodes.clone(), vec![e(0, 1, NeighborKind::Unrelated)], 1.1, 2, 3).is_err());
        assert!(MatchGraph::from_parts(nodes.clone(), vec![], 0.9, 2, 3).is_err());
        let g = MatchGraph::from_parts(nodes, vec![e(2, 0, NeighborKind::Compatible), e(1, 0, NeighborKind::Incompatible)], 1.1, 2, 3).unwrap();
        assert_eq!(g.edges()[0], e(0, 1, NeighborKind::Incompatible));
        assert_eq!(g.edges()[1], e(0, 2, NeighborKind::Compatible));
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn dump_format() {
        let nodes = vec![
            Node { correspondence: Correspondence::new(3, 4, 0.0), observation: ObservationMessage::UNIFORM },
            Node { correspondence: Correspondence::new(5, 6, 0.0), observation: ObservationMessage { outlier: 0.25, inlier: 0.75 } },
        ];
        let g = MatchGraph::from_parts(nodes, vec![Edge { i: 0, j: 1, kind: NeighborKind::Compatible }], 1.5, 10, 50).unwrap();
        assert_eq!(g.dump(), "lambda 1.5 k 10 l 50\nnode 0 3 4 0.5 0.5\nnode 1 5 6 0.25 0.75\nedge 0 1 C\n");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn classification_is_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let p: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let q: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let (ip, iq) = (index(&p), index(&q));
            for _ in 0..30 {
                let a = Correspondence::new(rng.random_range(0..n), rng.random_range(0..n), 0.0);
                let b = Correspondence::new(rng.random_range(0..n), rng.random_range(0..n), 0.0);
                if (a.p, a.q) == (b.p, b.q) { continue; }
                proptest::prop_assert_eq!(
                    classify_pair(&a, &b, &ip, &iq, 4, 12).unwrap(),
                    classify_pair(&b, &a, &ip, &iq, 4, 12).unwrap()
                );
            }
        }
    }
}
