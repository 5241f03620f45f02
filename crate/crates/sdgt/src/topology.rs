//! Subnet topologies: random geometric graphs per subnet and their
//! Metropolis–Hastings mixing matrices.
//!
//! Clients are partitioned into subnets. Each subnet communicates over a
//! connected random geometric graph: nodes placed uniformly in a square of
//! side [`PLACEMENT_SIDE`], an edge whenever two nodes are within the subnet
//! connectivity radius, redrawn until connected. Gossip steps mix with the
//! Metropolis–Hastings weights of that graph, which are symmetric and doubly
//! stochastic by construction.
//!
//! The quality of a mixing matrix is summarised by `rho = 1 - ||W - J||_2^2`
//! (`J` the averaging matrix), the per-step contraction rate of the
//! disagreement norm: `||X(W - J)||_F^2 <= (1 - rho) ||X(I - J)||_F^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Side length of the square nodes are placed in.
pub const PLACEMENT_SIDE: f64 = 2.0;

/// Default number of placement attempts before giving up on connectivity.
pub const DEFAULT_RETRY_LIMIT: usize = 1000;

/// Tolerance for doubly-stochastic / symmetry validation.
pub const STOCHASTICITY_TOL: f64 = 1e-12;

/// Undirected simple graph on a subnet's clients (local indices `0..nodes`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubnetGraph {
    nodes: usize,
    adj: Vec<bool>, // row-major nodes x nodes; symmetric, zero diagonal
}

impl SubnetGraph {
    pub fn new(nodes: usize) -> Self {
        SubnetGraph {
            nodes,
            adj: vec![false; nodes * nodes],
        }
    }

    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = SubnetGraph::new(nodes);
        for &(u, v) in edges {
            if u >= nodes || v >= nodes {
                return Err(Error::InvalidMatrix(format!(
                    "edge ({u},{v}) out of range for {nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidMatrix(format!("self-loop at node {u}")));
            }
            g.add_edge(u, v);
        }
        Ok(g)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        self.adj[u * self.nodes + v] = true;
        self.adj[v * self.nodes + u] = true;
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.nodes + v]
    }

    pub fn degree(&self, u: usize) -> usize {
        (0..self.nodes).filter(|&v| self.has_edge(u, v)).count()
    }

    /// Edges as `(u, v)` with `u < v`, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.nodes {
            for v in u + 1..self.nodes {
                if self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Breadth-first connectivity. The empty graph on one node is connected.
    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return false;
        }
        let mut seen = vec![false; self.nodes];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.nodes {
                if self.has_edge(u, v) && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.nodes
    }
}

/// Draw one connected random geometric graph: `m` nodes uniform in the
/// placement square, edges within `radius`, redrawn until connected.
///
/// Consumes draws from `rng` for every attempt, so the result is a
/// deterministic function of the stream state.
pub fn geometric_graph_from(
    m: usize,
    radius: f64,
    rng: &mut ChaCha8Rng,
    retry_limit: usize,
) -> Result<SubnetGraph> {
    if m == 0 {
        return Err(Error::config("subnet must have at least one client"));
    }
    if !(radius > 0.0) {
        return Err(Error::config(format!("radius must be positive, got {radius}")));
    }
    for _ in 0..retry_limit {
        let pts: Vec<(f64, f64)> = (0..m)
            .map(|_| {
                (
                    rng.random_range(0.0..PLACEMENT_SIDE),
                    rng.random_range(0.0..PLACEMENT_SIDE),
                )
            })
            .collect();
        let mut g = SubnetGraph::new(m);
        for u in 0..m {
            for v in u + 1..m {
                let (dx, dy) = (pts[u].0 - pts[v].0, pts[u].1 - pts[v].1);
                if (dx * dx + dy * dy).sqrt() <= radius {
                    g.add_edge(u, v);
                }
            }
        }
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Disconnected(format!(
        "no connected geometric graph with m={m}, radius={radius} after {retry_limit} attempts"
    )))
}

/// Seed-addressed wrapper around [`geometric_graph_from`].
pub fn generate_geometric_subnet(m: usize, radius: f64, seed: u64) -> Result<SubnetGraph> {
    let mut rng = stream(seed, Domain::TopologyPlacement, 0);
    geometric_graph_from(m, radius, &mut rng, DEFAULT_RETRY_LIMIT)
}

/// Metropolis–Hastings weights of a connected graph:
/// `w_uv = 1 / (1 + max(deg_u, deg_v))` on edges, diagonal as the leftover
/// mass. Symmetric and doubly stochastic with strictly positive diagonal.
pub fn metropolis_hastings_weights(g: &SubnetGraph) -> Result<DMatrix<f64>> {
    if !g.is_connected() {
        return Err(Error::InvalidMatrix(
            "mixing weights require a connected graph".into(),
        ));
    }
    let m = g.nodes();
    let deg: Vec<usize> = (0..m).map(|u| g.degree(u)).collect();
    let mut w = DMatrix::zeros(m, m);
    for u in 0..m {
        for v in u + 1..m {
            if g.has_edge(u, v) {
                let x = 1.0 / (1.0 + deg[u].max(deg[v]) as f64);
                w[(u, v)] = x;
                w[(v, u)] = x;
            }
        }
    }
    for u in 0..m {
        let off: f64 = (0..m).filter(|&v| v != u).map(|v| w[(u, v)]).sum();
        w[(u, u)] = 1.0 - off;
    }
    Ok(w)
}

/// Validate that `w` is square, symmetric and doubly stochastic within `tol`.
pub fn check_doubly_stochastic(w: &DMatrix<f64>, tol: f64) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(Error::InvalidMatrix(format!(
            "matrix is {}x{}, expected square",
            w.nrows(),
            w.ncols()
        )));
    }
    let m = w.nrows();
    for i in 0..m {
        for j in 0..m {
            if w[(i, j)] < -tol {
                return Err(Error::InvalidMatrix(format!(
                    "negative weight w[{i},{j}] = {}",
                    w[(i, j)]
                )));
            }
            if (w[(i, j)] - w[(j, i)]).abs() > tol {
                return Err(Error::InvalidMatrix(format!(
                    "asymmetry at ({i},{j}): {} vs {}",
                    w[(i, j)],
                    w[(j, i)]
                )));
            }
        }
        let row_sum: f64 = w.row(i).sum();
        if (row_sum - 1.0).abs() > tol {
            return Err(Error::InvalidMatrix(format!(
                "row {i} sums to {row_sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Contraction rate `rho = 1 - ||W - J||_2^2` of a symmetric doubly
/// stochastic mixing matrix. Rejects matrices whose disagreement operator
/// does not contract (`||W - J||_2 >= 1`, e.g. disconnected support).
pub fn mixing_rate(w: &DMatrix<f64>) -> Result<f64> {
    check_doubly_stochastic(w, STOCHASTICITY_TOL)?;
    let m = w.nrows();
    let j = DMatrix::from_element(m, m, 1.0 / m as f64);
    let eig = nalgebra::SymmetricEigen::new(w - j);
    let sigma = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if !(sigma < 1.0 - 1e-12) {
        return Err(Error::InvalidMatrix(format!(
            "||W - J||_2 = {sigma:.17} >= 1: not a contraction (disconnected support?)"
        )));
    }
    Ok(1.0 - sigma * sigma)
}

/// Outcome of a randomized check of the mixing contraction inequality.
#[derive(Clone, Copy, Debug)]
pub struct MixingInequalityReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `lhs - (1 - rho) * rhs` over all trials.
    pub worst_margin: f64,
}

impl MixingInequalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Test `||X(W - J)||_F^2 <= (1 - rho) ||X(I - J)||_F^2` on `trials` random
/// Gaussian matrices `X` (8 rows), with relative slack `1e-9`.
///
/// The slack also carries a tiny absolute component proportional to the
/// right-hand side: when `rho = 1` (complete graph, `W = J` up to
/// rounding) the bound is exactly zero while the left side keeps
/// O(eps^2 ||X||^2) of floating-point residue, and without that term the
/// perfect mixer would flunk its own inequality.
pub fn check_mixing_inequality(
    w: &DMatrix<f64>,
    rho: f64,
    trials: usize,
    seed: u64,
) -> MixingInequalityReport {
    const ROWS: usize = 8;
    const REL_SLACK: f64 = 1e-9;
    const ABS_SLACK: f64 = 1e-24;
    let m = w.nrows();
    let j = DMatrix::from_element(m, m, 1.0 / m as f64);
    let w_minus_j = w - &j;
    let i_minus_j = DMatrix::identity(m, m) - &j;
    let mut rng = stream(seed, Domain::Check, 0);
    let normal = rand_distr::StandardNormal;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = DMatrix::from_fn(ROWS, m, |_, _| rng.sample::<f64, _>(normal));
        let lhs = (&x * &w_minus_j).norm_squared();
        let rhs = (&x * &i_minus_j).norm_squared();
        let bound = (1.0 - rho) * rhs;
        let margin = lhs - bound;
        worst = worst.max(margin);
        if lhs > bound + REL_SLACK * bound + ABS_SLACK * rhs {
            violations += 1;
        }
    }
    MixingInequalityReport {
        trials,
        violations,
        worst_margin: worst,
    }
}

/// Boolean form of [`check_mixing_inequality`].
pub fn verify_mixing_inequality(w: &DMatrix<f64>, rho: f64, trials: usize, seed: u64) -> bool {
    check_mixing_inequality(w, rho, trials, seed).passed()
}

/// Partition of clients into subnets together with each subnet's gossip
/// graph, mixing matrix and contraction rate.
#[derive(Clone, Debug)]
pub struct SubnetTopology {
    subnets: Vec<Vec<usize>>,
    graphs: Vec<SubnetGraph>,
    weights: Vec<DMatrix<f64>>,
    rho: Vec<f64>,
    client_subnet: Vec<usize>,
}

/// Serializable form of a topology: membership lists, edge lists, dense
/// weight rows and mixing rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub subnets: Vec<Vec<usize>>,
    pub edges: Vec<Vec<(usize, usize)>>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
}

impl SubnetTopology {
    /// Generate a topology with the given subnet sizes. Subnet `s` draws its
    /// connectivity radius uniformly from `radius_range` and its node
    /// placement from its own seed stream, so the result is a deterministic
    /// function of `seed`.
    pub fn generate(sizes: &[usize], radius_range: (f64, f64), seed: u64) -> Result<Self> {
        Self::generate_with_retries(sizes, radius_range, seed, DEFAULT_RETRY_LIMIT)
    }

    pub fn generate_with_retries(
        sizes: &[usize],
        radius_range: (f64, f64),
        seed: u64,
        retry_limit: usize,
    ) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::config("need at least one subnet"));
        }
        if sizes.iter().any(|&m| m == 0) {
            return Err(Error::config("subnet sizes must be positive"));
        }
        let (lo, hi) = radius_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config(format!(
                "invalid radius range [{lo}, {hi}]"
            )));
        }
        let mut subnets = Vec::with_capacity(sizes.len());
        let mut graphs = Vec::with_capacity(sizes.len());
        let mut next = 0usize;
        for (s, &m) in sizes.iter().enumerate() {
            subnets.push((next..next + m).collect::<Vec<_>>());
            next += m;
            let radius = if lo == hi {
                lo
            } else {
                stream(seed, Domain::TopologyRadius, s as u64).random_range(lo..hi)
            };
            let mut placement = stream(seed, Domain::TopologyPlacement, s as u64);
            graphs.push(geometric_graph_from(m, radius, &mut placement, retry_limit)?);
        }
        let weights = graphs
            .iter()
            .map(metropolis_hastings_weights)
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(subnets, graphs, weights)
    }

    /// Assemble and validate a topology from explicit parts. Mixing rates
    /// are computed here.
    pub fn from_parts(
        subnets: Vec<Vec<usize>>,
        graphs: Vec<SubnetGraph>,
        weights: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if subnets.len() != graphs.len() || subnets.len() != weights.len() {
            return Err(Error::config(
                "subnets, graphs and weights must have equal length",
            ));
        }
        let n: usize = subnets.iter().map(|c| c.len()).sum();
        let mut client_subnet = vec![usize::MAX; n];
        for (s, members) in subnets.iter().enumerate() {
            if members.len() != graphs[s].nodes() || members.len() != weights[s].nrows() {
                return Err(Error::config(format!(
                    "subnet {s}: membership, graph and weights disagree on size"
                )));
            }
            for &c in members {
                if c >= n {
                    return Err(Error::config(format!(
                        "client id {c} out of range for {n} clients"
                    )));
                }
                if client_subnet[c] != usize::MAX {
                    return Err(Error::config(format!(
                        "client {c} assigned to more than one subnet"
                    )));
                }
                client_subnet[c] = s;
            }
        }
        // Every id seen exactly once => partition of 0..n.
        debug_assert!(client_subnet.iter().all(|&s| s != usize::MAX));
        let rho = weights.iter().map(mixing_rate).collect::<Result<Vec<_>>>()?;
        let topo = SubnetTopology {
            subnets,
            graphs,
            weights,
            rho,
            client_subnet,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Re-check all structural invariants: partition, connectivity, doubly
    /// stochastic weights, contraction rates in `(0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_clients();
        let mut seen = vec![false; n];
        for members in &self.subnets {
            for &c in members {
                if c >= n || seen[c] {
                    return Err(Error::config("subnets do not partition the clients"));
                }
                seen[c] = true;
            }
        }
        if !seen.iter().all(|&b| b) {
            return Err(Error::config("subnets do not cover all clients"));
        }
        for (s, g) in self.graphs.iter().enumerate() {
            if !g.is_connected() {
                return Err(Error::Disconnected(format!("subnet {s} graph disconnected")));
            }
            check_doubly_stochastic(&self.weights[s], STOCHASTICITY_TOL)?;
            let rho = self.rho[s];
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidMatrix(format!(
                    "subnet {s} mixing rate {rho} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.client_subnet.len()
    }

    pub fn num_subnets(&self) -> usize {
        self.subnets.len()
    }

    pub fn subnets(&self) -> &[Vec<usize>] {
        &self.subnets
    }

    pub fn subnet_sizes(&self) -> Vec<usize> {
        self.subnets.iter().map(|m| m.len()).collect()
    }

    pub fn members(&self, s: usize) -> &[usize] {
        &self.subnets[s]
    }

    pub fn graph(&self, s: usize) -> &SubnetGraph {
        &self.graphs[s]
    }

    pub fn weights(&self, s: usize) -> &DMatrix<f64> {
        &self.weights[s]
    }

    pub fn rho(&self, s: usize) -> f64 {
        self.rho[s]
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn client_subnet(&self, client: usize) -> usize {
        self.client_subnet[client]
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            subnets: self.subnets.clone(),
            edges: self.graphs.iter().map(|g| g.edges()).collect(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    (0..w.nrows())
                        .map(|i| w.row(i).iter().copied().collect())
                        .collect()
                })
                .collect(),
            rho: self.rho.clone(),
        }
    }

    /// Rebuild from a document, re-validating everything and recomputing the
    /// mixing rates (the stored ones must agree within 1e-9).
    pub fn from_document(doc: &TopologyDocument) -> Result<Self> {
        let graphs = doc
            .subnets
            .iter()
            .zip(&doc.edges)
            .map(|(members, edges)| SubnetGraph::from_edges(members.len(), edges))
            .collect::<Result<Vec<_>>>()?;
        let weights = doc
            .weights
            .iter()
            .map(|rows| {
                let m = rows.len();
                if rows.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidMatrix("ragged weight rows".into()));
                }
                Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        let topo = Self::from_parts(doc.subnets.clone(), graphs, weights)?;
        for (s, (&stored, &computed)) in doc.rho.iter().zip(&topo.rho).enumerate() {
            if (stored - computed).abs() > 1e-9 * computed.max(1.0) {
                return Err(Error::InvalidMatrix(format!(
                    "subnet {s}: stored rho {stored} disagrees with recomputed {computed}"
                )));
            }
        }
        Ok(topo)
    }

    pub fn dump(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_document(&serde_json::from_str(&text)?)
    }
}

/// `n` clients split into `s` equal subnets; errors unless `s` divides `n`.
pub fn equal_sizes(n: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || n == 0 {
        return Err(Error::config("need at least one client and one subnet"));
    }
    if n % s != 0 {
        return Err(Error::config(format!(
            "{n} clients cannot be split into {s} equal subnets"
        )));
    }
    Ok(vec![n / s; s])
}

/// Stack per-client column vectors (d x m) and mix them: column `i` of the
/// result is `sum_j w_ij * cols[j]`. Helper shared by the trainers.
pub fn mix_columns(w: &DMatrix<f64>, cols: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let m = cols.len();
    debug_assert_eq!(w.nrows(), m);
    let d = cols.first().map_or(0, |c| c.len());
    (0..m)
        .map(|i| {
            let mut out = DVector::zeros(d);
            for j in 0..m {
                out.axpy(w[(i, j)], &cols[j], 1.0);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3_weights() -> DMatrix<f64> {
        let g = SubnetGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        metropolis_hastings_weights(&g).unwrap()
    }

    #[test]
    fn single_node_subnet_is_trivially_connected() {
        let g = generate_geometric_subnet(1, 0.5, 42).unwrap();
        assert_eq!(g.nodes(), 1);
        assert!(g.edges().is_empty());
        assert!(g.is_connected());
        let w = metropolis_hastings_weights(&g).unwrap();
        assert_eq!(w[(0, 0)], 1.0);
        assert_eq!(mixing_rate(&w).unwrap(), 1.0);
    }

    #[test]
    fn radius_covering_the_square_gives_complete_graph() {
        // Diagonal of the placement square is 2*sqrt(2) < 3.5.
        let g = generate_geometric_subnet(5, 3.5, 1).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                assert_eq!(g.has_edge(u, v), u != v);
            }
        }
        let w = metropolis_hastings_weights(&g).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                assert!((w[(u, v)] - 0.2).abs() < 1e-15);
            }
        }
        // W equals the averaging matrix, so the contraction is perfect.
        assert!((mixing_rate(&w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generated_graph_is_connected_and_symmetric() {
        let g = generate_geometric_subnet(5, 0.9, 7).unwrap();
        assert!(g.is_connected());
        for u in 0..5 {
            assert!(!g.has_edge(u, u));
            for v in 0..5 {
                assert_eq!(g.has_edge(u, v), g.has_edge(v, u));
            }
        }
    }

    #[test]
    fn nonpositive_radius_rejected() {
        assert!(generate_geometric_subnet(3, 0.0, 1).is_err());
        assert!(generate_geometric_subnet(3, -1.0, 1).is_err());
    }

    #[test]
    fn retry_limit_exceeded_is_explicit() {
        // Radius too small to ever connect 3 nodes except by luck; with a
        // single attempt the failure is (deterministically) hit.
        let mut rng = stream(3, Domain::TopologyPlacement, 0);
        let err = geometric_graph_from(4, 1e-6, &mut rng, 1).unwrap_err();
        assert!(matches!(err, Error::Disconnected(_)));
    }

    #[test]
    fn two_node_weights_are_half_half() {
        let g = SubnetGraph::from_edges(2, &[(0, 1)]).unwrap();
        let w = metropolis_hastings_weights(&g).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                assert_eq!(w[(u, v)], 0.5);
            }
        }
    }

    #[test]
    fn path_graph_weights_match_hand_computation() {
        // Degrees (1, 2, 1): off-diagonals 1/3, diagonal fills to 1.
        let w = path3_weights();
        let expect = [
            [2.0 / 3.0, 1.0 / 3.0, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((w[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn path_graph_mixing_rate_is_five_ninths() {
        // Eigenvalues of W are {1, 2/3, 0}; second largest magnitude 2/3,
        // so rho = 1 - 4/9 = 5/9.
        let rho = mixing_rate(&path3_weights()).unwrap();
        assert!((rho - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn identity_matrix_is_rejected_as_non_contraction() {
        let w = DMatrix::identity(2, 2);
        assert!(mixing_rate(&w).is_err());
    }

    #[test]
    fn mixing_inequality_holds_on_path_graph() {
        let w = path3_weights();
        let rho = mixing_rate(&w).unwrap();
        let report = check_mixing_inequality(&w, rho, 1000, 5);
        assert!(report.passed(), "worst margin {}", report.worst_margin);
    }

    #[test]
    fn mixing_inequality_detects_an_overclaimed_rate() {
        // The identity mixes nothing; claiming rho = 0.5 must fail.
        let w = DMatrix::identity(2, 2);
        assert!(!verify_mixing_inequality(&w, 0.5, 100, 5));
    }

    #[test]
    fn mixing_inequality_tolerates_the_perfect_mixer() {
        // Complete graph: W = J up to rounding, rho = 1, bound = 0.  Only
        // the absolute slack term keeps fp residue from counting as a
        // violation here.
        let g = SubnetGraph::from_edges(
            7,
            &[
                (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6),
                (1, 2), (1, 3), (1, 4), (1, 5), (1, 6),
                (2, 3), (2, 4), (2, 5), (2, 6),
                (3, 4), (3, 5), (3, 6),
                (4, 5), (4, 6),
                (5, 6),
            ],
        )
        .unwrap();
        let w = metropolis_hastings_weights(&g).unwrap();
        let rho = mixing_rate(&w).unwrap();
        assert_eq!(rho, 1.0);
        assert!(verify_mixing_inequality(&w, rho, 1000, 5));
    }

    #[test]
    fn topology_generation_is_deterministic() {
        let sizes = [3, 4, 5];
        let a = SubnetTopology::generate(&sizes, (0.5, 3.5), 17).unwrap();
        let b = SubnetTopology::generate(&sizes, (0.5, 3.5), 17).unwrap();
        assert_eq!(a.subnets(), b.subnets());
        for s in 0..3 {
            assert_eq!(a.graph(s), b.graph(s));
            assert_eq!(a.weights(s), b.weights(s));
        }
        let c = SubnetTopology::generate(&sizes, (0.5, 3.5), 18).unwrap();
        let same = (0..3).all(|s| a.graph(s) == c.graph(s));
        assert!(!same, "different seeds should give different graphs");
    }

    #[test]
    fn subnets_partition_the_clients() {
        let topo = SubnetTopology::generate(&[3, 4, 5], (0.8, 3.5), 2).unwrap();
        assert_eq!(topo.num_clients(), 12);
        let mut all: Vec<usize> = topo.subnets().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        for c in 0..12 {
            assert!(topo.members(topo.client_subnet(c)).contains(&c));
        }
    }

    #[test]
    fn document_round_trip_preserves_weights_exactly() {
        let topo = SubnetTopology::generate(&[4, 4], (0.8, 2.0), 9).unwrap();
        let json = serde_json::to_string(&topo.to_document()).unwrap();
        let doc: TopologyDocument = serde_json::from_str(&json).unwrap();
        let back = SubnetTopology::from_document(&doc).unwrap();
        for s in 0..2 {
            assert_eq!(topo.weights(s), back.weights(s));
            assert_eq!(topo.graph(s), back.graph(s));
        }
    }

    #[test]
    fn equal_sizes_requires_divisibility() {
        assert_eq!(equal_sizes(30, 6).unwrap(), vec![5; 6]);
        assert!(equal_sizes(10, 3).is_err());
    }

    #[test]
    fn mix_columns_matches_direct_sum() {
        let w = path3_weights();
        let cols = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![2.0, -1.0]),
        ];
        let mixed = mix_columns(&w, &cols);
        for i in 0..3 {
            for r in 0..2 {
                let direct: f64 = (0..3).map(|j| w[(i, j)] * cols[j][r]).sum();
                assert!((mixed[i][r] - direct).abs() < 1e-15);
            }
        }
    }
}
