//! Loopy belief propagation over a [`MatchGraph`].
//!
//! Messages are two-component vectors `(outlier, inlier)` normalised to unit
//! L1 norm. One synchronous round recomputes every directed message from
//! the previous round's messages:
//!
//! ```text
//! m_ij ← (1/Z) · F_ij · (m_i ∘ ∏_{k ∈ ∂i \ j} m_ki)
//! ```
//!
//! with `F⁺ = [[1, 1], [1, λ]]` on compatible edges and
//! `F⁻ = [[λ, λ], [λ, 1]]` on incompatible ones. Marginals are
//! `b_i = (1/Z) · m_i ∘ ∏_{k ∈ ∂i} m_ki`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matchgraph::{MatchGraph, NeighborKind};
use crate::matching::ObservationMessage;
use crate::{Error, Result};

/// Largest graph [`exact_marginals`] will enumerate.
pub const ORACLE_LIMIT: usize = 20;
/// Degree above which incoming products are accumulated in log space.
const LOG_SPACE_DEGREE: usize = 30;
/// Graphs at least this large update messages on the rayon pool.
const PARALLEL_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub outlier: f64,
    pub inlier: f64,
}

impl Message {
    pub const UNIFORM: Self = Self {
        outlier: 0.5,
        inlier: 0.5,
    };

    /// L1-normalises `(a, b)`; returns `None` when the sum is zero or not finite.
    pub fn normalized(a: f64, b: f64) -> Option<Self> {
        let z = a + b;
        (z > 0.0 && z.is_finite()).then(|| Self {
            outlier: a / z,
            inlier: b / z,
        })
    }

    fn max_abs_diff(&self, other: &Message) -> f64 {
        (self.outlier - other.outlier)
            .abs()
            .max((self.inlier - other.inlier).abs())
    }
}

impl From<ObservationMessage> for Message {
    fn from(o: ObservationMessage) -> Self {
        Self {
            outlier: o.outlier,
            inlier: o.inlier,
        }
    }
}

/// 2×2 pairwise potential indexed `[state_i][state_j]`, state 0 = outlier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityMatrix(pub [[f64; 2]; 2]);

impl CompatibilityMatrix {
    pub fn compatible(lambda: f64) -> Self {
        Self([[1.0, 1.0], [1.0, lambda]])
    }

    pub fn incompatible(lambda: f64) -> Self {
        Self([[lambda, lambda], [lambda, 1.0]])
    }

    pub fn for_kind(kind: NeighborKind, lambda: f64) -> Self {
        match kind {
            NeighborKind::Compatible => Self::compatible(lambda),
            NeighborKind::Incompatible => Self::incompatible(lambda),
            NeighborKind::Unrelated => Self([[1.0; 2]; 2]),
        }
    }

    /// `out[s_j] = Σ_{s_i} F[s_i][s_j] · v[s_i]`.
    pub fn propagate(&self, v: (f64, f64)) -> (f64, f64) {
        let f = &self.0;
        (f[0][0] * v.0 + f[1][0] * v.1, f[0][1] * v.0 + f[1][1] * v.1)
    }
}

/// Directed messages in CSR order: the outgoing messages of node `i` occupy
/// `offsets[i]..offsets[i + 1]`, in the order of `graph.neighbors(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    offsets: Vec<usize>,
    /// Slot of the reverse message `j → i` for each slot `i → j`.
    reverse: Vec<usize>,
    messages: Vec<Message>,
    /// Buffer for the next round, swapped with `messages`.
    scratch: Vec<Message>,
    observations: Vec<Message>,
    iteration: usize,
    underflow: bool,
}

impl BeliefState {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn num_messages(&self) -> usize {
        self.messages.len()
    }

    /// Set once any normalisation hit a zero sum and fell back to uniform.
    pub fn underflow(&self) -> bool {
        self.underflow
    }

    pub fn observations(&self) -> &[Message] {
        &self.observations
    }

    fn slot(&self, graph: &MatchGraph, from: usize, to: usize) -> Option<usize> {
        if from >= graph.len() {
            return None;
        }
        let pos = graph.neighbors(from).binary_search_by_key(&to, |&(n, _)| n).ok()?;
        Some(self.offsets[from] + pos)
    }

    /// Current message `from → to`, if the two nodes share an edge.
    pub fn message(&self, graph: &MatchGraph, from: usize, to: usize) -> Option<Message> {
        self.slot(graph, from, to).map(|s| self.messages[s])
    }

    /// Overwrites a message; used to seed non-default starting points.
    pub fn set_message(&mut self, graph: &MatchGraph, from: usize, to: usize, m: Message) -> Result<()> {
        let s = self
            .slot(graph, from, to)
            .ok_or_else(|| Error::InvalidParameter(format!("no edge between {from} and {to}")))?;
        self.messages[s] = m;
        Ok(())
    }

    /// Incoming messages of `node` as `(sender, message)`.
    fn incoming<'a>(&'a self, graph: &'a MatchGraph, node: usize) -> impl Iterator<Item = (usize, Message)> + 'a {
        let base = self.offsets[node];
        graph
            .neighbors(node)
            .iter()
            .enumerate()
            .map(move |(pos, &(nbr, _))| (nbr, self.messages[self.reverse[base + pos]]))
    }
}

/// Fresh state: every directed message is (0.5, 0.5), observations copied
/// from the graph nodes.
pub fn init_state(graph: &MatchGraph) -> BeliefState {
    let n = graph.len();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        offsets.push(offsets[i] + graph.degree(i));
    }
    let total = offsets[n];
    let mut reverse = vec![0; total];
    for i in 0..n {
        for (pos, &(j, _)) in graph.neighbors(i).iter().enumerate() {
            let back = graph
                .neighbors(j)
                .binary_search_by_key(&i, |&(x, _)| x)
                .expect("adjacency is symmetric");
            reverse[offsets[i] + pos] = offsets[j] + back;
        }
    }
    BeliefState {
        offsets,
        reverse,
        messages: vec![Message::UNIFORM; total],
        scratch: Vec::new(),
        observations: graph.nodes().iter().map(|n| n.observation.into()).collect(),
        iteration: 0,
        underflow: false,
    }
}

/// `m_i ∘ ∏ m_ki` over the incoming messages, skipping sender `exclude`.
/// Unnormalised; log space for high-degree nodes.
fn incoming_product(state: &BeliefState, graph: &MatchGraph, node: usize, exclude: Option<usize>) -> (f64, f64) {
    let obs = state.observations[node];
    if graph.degree(node) <= LOG_SPACE_DEGREE {
        let mut acc = (obs.outlier, obs.inlier);
        for (k, m) in state.incoming(graph, node) {
            if Some(k) != exclude {
                acc.0 *= m.outlier;
                acc.1 *= m.inlier;
            }
        }
        acc
    } else {
        let mut la = (obs.outlier.ln(), obs.inlier.ln());
        for (k, m) in state.incoming(graph, node) {
            if Some(k) != exclude {
                la.0 += m.outlier.ln();
                la.1 += m.inlier.ln();
            }
        }
        let top = la.0.max(la.1);
        if top == f64::NEG_INFINITY {
            return (0.0, 0.0);
        }
        ((la.0 - top).exp(), (la.1 - top).exp())
    }
}

fn kind_between(graph: &MatchGraph, node: usize, pos: usize) -> NeighborKind {
    let (_, e) = graph.neighbors(node)[pos];
    graph.edges()[e].kind
}

fn outgoing(state: &BeliefState, graph: &MatchGraph, from: usize, pos: usize) -> (Message, bool) {
    let (to, _) = graph.neighbors(from)[pos];
    let prod = incoming_product(state, graph, from, Some(to));
    let f = CompatibilityMatrix::for_kind(kind_between(graph, from, pos), graph.lambda());
    let (a, b) = f.propagate(prod);
    match Message::normalized(a, b) {
        Some(m) => (m, false),
        None => (Message::UNIFORM, true),
    }
}

/// One message update `from → to` against the current state. The boolean
/// is set when the normaliser vanished and a uniform message was returned.
pub fn update_message(graph: &MatchGraph, state: &BeliefState, from: usize, to: usize) -> Result<(Message, bool)> {
    let slot = state
        .slot(graph, from, to)
        .ok_or_else(|| Error::InvalidParameter(format!("no edge between {from} and {to}")))?;
    Ok(outgoing(state, graph, from, slot - state.offsets[from]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Weight of the previous message in `new = (1 − d)·update + d·old`.
    pub damping: f64,
}

impl Default for LbpOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            damping: 0.0,
        }
    }
}

impl LbpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    /// Largest component change in the last round.
    pub final_delta: f64,
    pub underflow: bool,
}

/// Writes every outgoing message of `node` into `out`, in neighbour order.
/// Exclusion products come from prefix and suffix products, so each
/// incoming message is read once. Returns true if a normaliser vanished.
fn node_updates(state: &BeliefState, graph: &MatchGraph, node: usize, out: &mut [Message]) -> bool {
    let nbrs = graph.neighbors(node);
    let d = nbrs.len();
    let base = state.offsets[node];
    let log = d > LOG_SPACE_DEGREE;
    let lift = |m: Message| if log { (m.outlier.ln(), m.inlier.ln()) } else { (m.outlier, m.inlier) };
    let combine = |a: (f64, f64), b: (f64, f64)| if log { (a.0 + b.0, a.1 + b.1) } else { (a.0 * b.0, a.1 * b.1) };
    let unit = if log { (0.0, 0.0) } else { (1.0, 1.0) };

    let incoming: Vec<(f64, f64)> = (0..d).map(|pos| lift(state.messages[state.reverse[base + pos]])).collect();
    let mut suffix = vec![unit; d + 1];
    for pos in (0..d).rev() {
        suffix[pos] = combine(incoming[pos], suffix[pos + 1]);
    }
    let lambda = graph.lambda();
    let mut prefix = lift(state.observations[node]);
    let mut underflow = false;
    for (pos, &(_, e)) in nbrs.iter().enumerate() {
        let mut prod = combine(prefix, suffix[pos + 1]);
        if log {
            let top = prod.0.max(prod.1);
            prod = if top == f64::NEG_INFINITY { (0.0, 0.0) } else { ((prod.0 - top).exp(), (prod.1 - top).exp()) };
        }
        let (a, b) = CompatibilityMatrix::for_kind(graph.edges()[e].kind, lambda).propagate(prod);
        out[pos] = Message::normalized(a, b).unwrap_or_else(|| {
            underflow = true;
            Message::UNIFORM
        });
        prefix = combine(prefix, incoming[pos]);
    }
    underflow
}

/// Runs one synchronous round and returns the largest component change.
pub fn step(graph: &MatchGraph, state: &mut BeliefState, damping: f64) -> f64 {
    let mut next = std::mem::take(&mut state.scratch);
    next.resize(state.messages.len(), Message::UNIFORM);
    let underflow = {
        let mut slices: Vec<&mut [Message]> = Vec::with_capacity(graph.len());
        let mut rest = next.as_mut_slice();
        for i in 0..graph.len() {
            let (head, tail) = rest.split_at_mut(graph.degree(i));
            slices.push(head);
            rest = tail;
        }
        let st: &BeliefState = state;
        if graph.len() >= PARALLEL_NODES {
            slices
                .into_par_iter()
                .enumerate()
                .map(|(i, out)| node_updates(st, graph, i, out))
                .reduce(|| false, |a, b| a | b)
        } else {
            slices
                .into_iter()
                .enumerate()
                .fold(false, |acc, (i, out)| node_updates(st, graph, i, out) | acc)
        }
    };
    let mut delta = 0.0f64;
    for (new, old) in next.iter_mut().zip(&state.messages) {
        if damping > 0.0 {
            new.outlier = (1.0 - damping) * new.outlier + damping * old.outlier;
            new.inlier = (1.0 - damping) * new.inlier + damping * old.inlier;
        }
        delta = delta.max(new.max_abs_diff(old));
    }
    state.scratch = std::mem::replace(&mut state.messages, next);
    state.iteration += 1;
    state.underflow |= underflow;
    delta
}

/// Iterates synchronous rounds until the largest message change drops
/// below `tol` or `max_iters` rounds have run, then computes marginals.
pub fn run_lbp(graph: &MatchGraph, options: &LbpOptions) -> Result<(Marginals, ConvergenceReport)> {
    options.validate()?;
    let mut state = init_state(graph);
    let mut delta = f64::INFINITY;
    let mut converged = false;
    while state.iteration < options.max_iters {
        delta = step(graph, &mut state, options.damping);
        if delta < options.tol {
            converged = true;
            break;
        }
    }
    let marginals = compute_marginals(graph, &state);
    let report = ConvergenceReport {
        iterations: state.iteration,
        converged,
        final_delta: delta,
        underflow: state.underflow || marginals.underflow,
    };
    Ok((marginals, report))
}

/// Per-node `(outlier, inlier)` posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    values: Vec<Message>,
    underflow: bool,
}

impl Marginals {
    pub fn new(values: Vec<Message>) -> Self {
        Self {
            values,
            underflow: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Message {
        self.values[i]
    }

    pub fn inlier(&self, i: usize) -> f64 {
        self.values[i].inlier
    }

    pub fn values(&self) -> &[Message] {
        &self.values
    }

    pub fn underflow(&self) -> bool {
        self.underflow
    }

    /// Text dump, one `marginal <node> <outlier_p> <inlier_p>` line per node.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, m) in self.values.iter().enumerate() {
            let _ = writeln!(s, "marginal {} {} {}", i, m.outlier, m.inlier);
        }
        s
    }
}

/// `b_i ∝ m_i ∘ ∏_{k ∈ ∂i} m_ki` for every node.
pub fn compute_marginals(graph: &MatchGraph, state: &BeliefState) -> Marginals {
    let mut underflow = false;
    let values = (0..graph.len())
        .map(|i| {
            let (a, b) = incoming_product(state, graph, i, None);
            Message::normalized(a, b).unwrap_or_else(|| {
                underflow = true;
                Message::UNIFORM
            })
        })
        .collect();
    Marginals { values, underflow }
}

/// Splits items by inlier marginal: `kept` when `inlier ≥ threshold`.
/// Order is preserved within each side.
pub fn filter_matches<T: Clone>(items: &[T], marginals: &Marginals, threshold: f64) -> Result<(Vec<T>, Vec<T>)> {
    let (kept, rejected) = partition_indices(marginals, threshold)?;
    if items.len() != marginals.len() {
        return Err(Error::DimensionMismatch {
            expected: marginals.len(),
            found: items.len(),
        });
    }
    Ok((
        kept.iter().map(|&i| items[i].clone()).collect(),
        rejected.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Index form of [`filter_matches`].
pub fn partition_indices(marginals: &Marginals, threshold: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok((0..marginals.len()).partition(|&i| marginals.inlier(i) >= threshold))
}

/// Exact marginals by enumerating all `2^N` joint states of
/// `∏_i m_i(x_i) · ∏_(i,j) F_ij(x_i, x_j)`. Limited to
/// [`ORACLE_LIMIT`] nodes.
pub fn exact_marginals(graph: &MatchGraph) -> Result<Marginals> {
    let n = graph.len();
    if n > ORACLE_LIMIT {
        return Err(Error::OracleLimit {
            nodes: n,
            limit: ORACLE_LIMIT,
        });
    }
    let obs: Vec<[f64; 2]> = graph
        .nodes()
        .iter()
        .map(|nd| [nd.observation.outlier, nd.observation.inlier])
        .collect();
    let pots: Vec<(usize, usize, CompatibilityMatrix)> = graph
        .edges()
        .iter()
        .map(|e| (e.i, e.j, CompatibilityMatrix::for_kind(e.kind, graph.lambda())))
        .collect();
    let mut inlier_mass = vec![0.0; n];
    let mut total = 0.0;
    for state in 0u32..(1u32 << n) {
        let bit = |i: usize| ((state >> i) & 1) as usize;
        let mut w = 1.0;
        for (i, o) in obs.iter().enumerate() {
            w *= o[bit(i)];
        }
        for (i, j, f) in &pots {
            w *= f.0[bit(*i)][bit(*j)];
        }
        total += w;
        for (i, m) in inlier_mass.iter_mut().enumerate() {
            if bit(i) == 1 {
                *m += w;
            }
        }
    }
    let mut underflow = false;
    let values = inlier_mass
        .into_iter()
        .map(|m| {
            if total > 0.0 {
                Message {
                    outlier: (total - m) / total,
                    inlier: m / total,
                }
            } else {
                underflow = true;
                Message::UNIFORM
            }
        })
        .collect();
    Ok(Marginals { values, underflow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchgraph::{Edge, Node};
    use crate::matching::Correspondence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(obs: (f64, f64)) -> Node {
        Node {
            correspondence: Correspondence::new(0, 0, 0.0),
            observation: ObservationMessage { outlier: obs.0, inlier: obs.1 },
        }
    }

    fn graph(obs: &[(f64, f64)], edges: &[(usize, usize, NeighborKind)], lambda: f64) -> MatchGraph {
        MatchGraph::from_parts(
            obs.iter().copied().map(node).collect(),
            edges.iter().map(|&(i, j, kind)| Edge { i, j, kind }).collect(),
            lambda,
            10,
            50,
        )
        .unwrap()
    }

    const U: (f64, f64) = (0.5, 0.5);
    use NeighborKind::{Compatible as C, Incompatible as I};

    fn close(a: Message, b: (f64, f64), tol: f64) -> bool {
        (a.outlier - b.0).abs() < tol && (a.inlier - b.1).abs() < tol
    }

    #[test]
    fn init_counts_and_values() {
        let g = graph(&[U, U, U, U], &[(0, 1, C), (1, 2, I), (2, 3, C)], 1.2);
        let s = init_state(&g);
        assert_eq!(s.num_messages(), 6);
        assert_eq!(s.message(&g, 1, 0), Some(Message::UNIFORM));
        assert_eq!(s.message(&g, 0, 2), None);
        let empty = graph(&[U, U], &[], 1.2);
        assert_eq!(init_state(&empty).num_messages(), 0);
    }

    #[test]
    fn single_update_by_hand() {
        let g = graph(&[U, U], &[(0, 1, C)], 2.0);
        let s = init_state(&g);
        let (m, uf) = update_message(&g, &s, 0, 1).unwrap();
        assert!(!uf);
        assert!(close(m, (0.4, 0.6), 1e-15));
        let g = graph(&[U, U], &[(0, 1, I)], 2.0);
        let (m, _) = update_message(&g, &init_state(&g), 0, 1).unwrap();
        assert!(close(m, (4.0 / 7.0, 3.0 / 7.0), 1e-15));
        assert!(update_message(&g, &init_state(&g), 0, 0).is_err());
    }

    #[test]
    fn unit_lambda_is_uniform() {
        let g = graph(&[(0.3, 0.7), (0.9, 0.1)], &[(0, 1, C)], 1.0);
        let (m, _) = update_message(&g, &init_state(&g), 0, 1).unwrap();
        assert!(close(m, (0.5, 0.5), 1e-15));
        let g = graph(&[(0.3, 0.7), (0.9, 0.1), U], &[(0, 1, C), (1, 2, I)], 1.0);
        let (marg, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert!(close(marg.get(0), (0.3, 0.7), 1e-12));
        assert!(close(marg.get(1), (0.9, 0.1), 1e-12));
        assert!(close(marg.get(2), (0.5, 0.5), 1e-12));
    }

    #[test]
    fn zero_edge_graph() {
        let g = graph(&[(0.25, 0.75), U], &[], 1.5);
        let (marg, report) = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(marg.get(0), Message { outlier: 0.25, inlier: 0.75 });
        assert_eq!(exact_marginals(&g).unwrap().get(0).inlier, 0.75);
    }

    #[test]
    fn two_node_compatible_chain() {
        let g = graph(&[U, U], &[(0, 1, C)], 2.0);
        let (marg, report) = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert!(report.converged);
        for i in 0..2 {
            assert!(close(marg.get(i), (0.4, 0.6), 1e-12));
        }
        let exact = exact_marginals(&g).unwrap();
        // Joint weights {00: 1, 01: 1, 10: 1, 11: 2} give P(x = 1) = 3/5.
        assert!(close(exact.get(0), (0.4, 0.6), 1e-15));
    }

    #[test]
    fn marginal_products_by_hand() {
        let mut g = graph(&[U, U], &[(0, 1, C)], 2.0);
        let mut s = init_state(&g);
        s.set_message(&g, 1, 0, Message { outlier: 0.4, inlier: 0.6 }).unwrap();
        assert!(close(compute_marginals(&g, &s).get(0), (0.4, 0.6), 1e-15));

        g = graph(&[U, U, U], &[(0, 1, C), (0, 2, C)], 2.0);
        s = init_state(&g);
        s.set_message(&g, 1, 0, Message { outlier: 0.4, inlier: 0.6 }).unwrap();
        s.set_message(&g, 2, 0, Message { outlier: 0.4, inlier: 0.6 }).unwrap();
        let b = compute_marginals(&g, &s).get(0);
        assert!(close(b, (0.16 / 0.52, 0.36 / 0.52), 1e-15));
        assert!((b.inlier - 0.6923).abs() < 1e-4);
    }

    #[test]
    fn incompatible_pair_penalises_joint_inliers() {
        let lambda = 1.5;
        let f = CompatibilityMatrix::incompatible(lambda);
        assert!(f.0[1][1] < f.0[0][0] && f.0[1][1] < f.0[0][1] && f.0[1][1] < f.0[1][0]);
        let g = graph(&[U, U], &[(0, 1, I)], lambda);
        let (marg, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        let exact = exact_marginals(&g).unwrap();
        for i in 0..2 {
            assert!(close(marg.get(i), (exact.get(i).outlier, exact.get(i).inlier), 1e-12));
        }
        let g = graph(&[U, U], &[(0, 1, C)], lambda);
        let (marg, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert!(marg.inlier(0) > 0.5 && marg.inlier(1) > 0.5);
    }

    #[test]
    fn filter_partitions() {
        let m = Marginals::new(vec![Message { outlier: 0.4, inlier: 0.6 }; 3]);
        let items = ["a", "b", "c"];
        let (kept, rejected) = filter_matches(&items, &m, 0.5).unwrap();
        assert_eq!((kept.len(), rejected.len()), (3, 0));
        let (kept, rejected) = filter_matches(&items, &m, 0.61).unwrap();
        assert_eq!((kept.len(), rejected.len()), (0, 3));
        let mixed = Marginals::new(vec![
            Message { outlier: 0.9, inlier: 0.1 },
            Message::UNIFORM,
            Message { outlier: 0.2, inlier: 0.8 },
        ]);
        let (kept, rejected) = filter_matches(&items, &mixed, 0.5).unwrap();
        assert_eq!(kept, vec!["b", "c"]);
        assert_eq!(rejected, vec!["a"]);
        assert!(filter_matches(&items, &mixed, 1.0).is_err());
        assert!(filter_matches(&items[..2], &mixed, 0.5).is_err());
    }

    #[test]
    fn oracle_limit() {
        let g = graph(&vec![U; ORACLE_LIMIT + 1], &[], 1.1);
        assert!(matches!(exact_marginals(&g), Err(Error::OracleLimit { .. })));
    }

    fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> MatchGraph {
        let obs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let p = rng.random_range(0.05..0.95);
                (1.0 - p, p)
            })
            .collect();
        let edges: Vec<(usize, usize, NeighborKind)> = (1..n)
            .map(|j| (rng.random_range(0..j), j, if rng.random_bool(0.5) { C } else { I }))
            .collect();
        let g = graph(&obs, &edges, 1.0);
        let bound = (2.0 / g.max_degree().max(1) as f64).exp();
        let lambda = rng.random_range(1.0..bound);
        g.with_lambda(lambda).unwrap()
    }

    #[test]
    fn trees_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let n = rng.random_range(1..=12);
            let g = random_tree(&mut rng, n);
            let (marg, report) = run_lbp(&g, &LbpOptions::default()).unwrap();
            assert!(report.converged);
            let exact = exact_marginals(&g).unwrap();
            for i in 0..n {
                assert!((marg.get(i).inlier - exact.get(i).inlier).abs() < 1e-9);
                assert!((marg.get(i).outlier - exact.get(i).outlier).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn triangle_with_weak_coupling_is_close() {
        let g = graph(&[(0.3, 0.7), U, (0.6, 0.4)], &[(0, 1, C), (1, 2, C), (0, 2, I)], 1.01);
        let (marg, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        let exact = exact_marginals(&g).unwrap();
        for i in 0..3 {
            assert!((marg.inlier(i) - exact.inlier(i)).abs() < 1e-3);
        }
    }

    #[test]
    fn messages_stay_normalised_every_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 15;
        let obs: Vec<(f64, f64)> = (0..n).map(|_| { let p: f64 = rng.random(); (1.0 - p, p) }).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.25) {
                    edges.push((i, j, if rng.random_bool(0.5) { C } else { I }));
                }
            }
        }
        let g = graph(&obs, &edges, 1.05);
        let mut s = init_state(&g);
        for _ in 0..20 {
            step(&g, &mut s, 0.0);
            for m in &s.messages {
                assert!((m.outlier + m.inlier - 1.0).abs() < 1e-12);
                assert!(m.outlier >= 0.0 && m.inlier >= 0.0);
            }
            let b = compute_marginals(&g, &s);
            for m in b.values() {
                assert!((m.outlier + m.inlier - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn node_order_does_not_matter() {
        let obs = [(0.3, 0.7), U, (0.6, 0.4), (0.45, 0.55), U];
        let edges = [(0, 1, C), (1, 2, C), (0, 2, I), (2, 3, C), (3, 4, I), (1, 4, C)];
        let g = graph(&obs, &edges, 1.2);
        let perm = [3usize, 0, 4, 1, 2];
        let pobs: Vec<(f64, f64)> = (0..5).map(|new| obs[perm.iter().position(|&p| p == new).unwrap()]).collect();
        let pedges: Vec<(usize, usize, NeighborKind)> = edges.iter().map(|&(i, j, k)| (perm[i], perm[j], k)).collect();
        let pg = graph(&pobs, &pedges, 1.2);
        let (a, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        let (b, _) = run_lbp(&pg, &LbpOptions::default()).unwrap();
        for i in 0..5 {
            assert!((a.inlier(i) - b.inlier(perm[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn damping_reaches_the_same_fixed_point() {
        let g = graph(&[(0.3, 0.7), U, (0.6, 0.4), U], &[(0, 1, C), (1, 2, C), (0, 2, I), (2, 3, C)], 1.3);
        let (a, _) = run_lbp(&g, &LbpOptions::default()).unwrap();
        let (b, rb) = run_lbp(&g, &LbpOptions { damping: 0.5, max_iters: 500, ..Default::default() }).unwrap();
        assert!(rb.converged);
        for i in 0..4 {
            assert!((a.inlier(i) - b.inlier(i)).abs() < 1e-7);
        }
    }

    #[test]
    fn high_degree_uses_log_space_consistently() {
        // A 40-leaf star exceeds the log-space threshold at the hub.
        let n = 41;
        let obs: Vec<(f64, f64)> = (0..n).map(|i| if i % 3 == 0 { (0.4, 0.6) } else { U }).collect();
        let edges: Vec<(usize, usize, NeighborKind)> = (1..n).map(|j| (0, j, if j % 2 == 0 { C } else { I })).collect();
        let g = graph(&obs, &edges, 1.02);
        let (marg, report) = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert!(report.converged && !report.underflow);
        // Star is a tree: compare against a direct product at the hub.
        let exact_hub = {
            let mut acc = (0.4f64, 0.6f64);
            for j in 1..n {
                let o = obs[j];
                let f = CompatibilityMatrix::for_kind(edges[j - 1].2, 1.02);
                let (a, b) = f.propagate(o);
                acc = (acc.0 * a, acc.1 * b);
            }
            acc.1 / (acc.0 + acc.1)
        };
        assert!((marg.inlier(0) - exact_hub).abs() < 1e-12);
    }

    #[test]
    fn options_are_validated() {
        let g = graph(&[U], &[], 1.1);
        assert!(run_lbp(&g, &LbpOptions { max_iters: 0, ..Default::default() }).is_err());
        assert!(run_lbp(&g, &LbpOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(run_lbp(&g, &LbpOptions { damping: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn marginal_dump_format() {
        let m = Marginals::new(vec![Message { outlier: 0.25, inlier: 0.75 }]);
        assert_eq!(m.dump(), "marginal 0 0.25 0.75\n");
    }
}
