//! Agent graphs and their derived matrices.
//!
//! The network is an undirected connected graph over `N` agents. With a
//! canonical (lexicographic) edge ordering, the agent-edge incidence matrix
//! `Ã ∈ {0,±1}^{|E|×N}` carries `+1` at the smaller endpoint and `−1` at the
//! larger endpoint of each edge. From it follow
//!
//! ```text
//! L̃⁻ = ÃᵀÃ          (signed Laplacian,   nulls exactly on consensus vectors)
//! L̃⁺ = 2D̃ − L̃⁻      (signless Laplacian, D̃ the degree matrix)
//! ```
//!
//! and their block expansions `A = Ã⊗I_M`, `L⁻ = L̃⁻⊗I_M`, `L⁺ = L̃⁺⊗I_M` for a
//! per-agent dual block size `M`. All spectra are computed on the `N×N` base
//! matrices — Kronecker products with an identity preserve eigenvalues while
//! cubing the factorization cost.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Eigenvalues below this threshold count as zero when deciding connectivity
/// and when selecting the smallest *nonzero* singular value of `L̃⁻`.
const ZERO_EIG_TOL: f64 = 1e-9;

/// Errors from graph construction and parsing.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("a cycle graph needs at least 3 agents, got {0}")]
    CycleTooSmall(usize),
    #[error("graph needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("edge probability must lie in (0, 1], got {0}")]
    BadEdgeProb(f64),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references agent out of range (N = {2})")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("malformed edge list: {0}")]
    Parse(String),
}

/// An undirected agent graph with a canonical edge ordering.
///
/// Edges are stored as `(i, j)` with `i < j`, sorted lexicographically; the
/// edge's position in the list is its incidence-matrix row. Construction
/// validates against self-loops, duplicates, and out-of-range indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list, normalizing and validating it.
    ///
    /// Pairs may arrive in any orientation and order; they are flipped to
    /// `i < j` and sorted lexicographically so that the incidence row order
    /// is reproducible.
    pub fn new(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n_agents < 2 {
            return Err(GraphError::TooFewAgents(n_agents));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= n_agents {
                return Err(GraphError::EdgeOutOfRange(i, j, n_agents));
            }
            canon.push((i, j));
        }
        canon.sort_unstable();
        for w in canon.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        let mut neighbors = vec![Vec::new(); n_agents];
        for &(i, j) in &canon {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            n_agents,
            edges: canon,
            neighbors,
        })
    }

    /// The `N`-cycle `(0,1), (1,2), …, (N−2,N−1), (0,N−1)`.
    pub fn cycle(n_agents: usize) -> Result<Self, GraphError> {
        if n_agents < 3 {
            return Err(GraphError::CycleTooSmall(n_agents));
        }
        let mut edges: Vec<(usize, usize)> = (0..n_agents - 1).map(|i| (i, i + 1)).collect();
        edges.push((0, n_agents - 1));
        Self::new(n_agents, &edges)
    }

    /// A seeded random graph, guaranteed connected.
    ///
    /// Each pair `(i, j)` is included independently with probability
    /// `edge_prob`. If the sample is disconnected, edges `(π_k, π_{k+1})`
    /// along a seeded random permutation `π` are added until it is. The same
    /// seed always yields the same edge list.
    pub fn random_connected(
        n_agents: usize,
        edge_prob: f64,
        seed: u64,
    ) -> Result<Self, GraphError> {
        if n_agents < 2 {
            return Err(GraphError::TooFewAgents(n_agents));
        }
        if !(edge_prob > 0.0 && edge_prob <= 1.0) {
            return Err(GraphError::BadEdgeProb(edge_prob));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                if rng.gen::<f64>() < edge_prob {
                    edges.push((i, j));
                }
            }
        }
        // Connectivity augmentation along a random permutation.
        let mut perm: Vec<usize> = (0..n_agents).collect();
        for k in (1..n_agents).rev() {
            let l = rng.gen_range(0..=k);
            perm.swap(k, l);
        }
        let mut graph = Self::new(n_agents, &edges)?;
        let mut k = 0;
        while !graph.is_connected() {
            let (a, b) = (perm[k], perm[k + 1]);
            let e = (a.min(b), a.max(b));
            if !graph.edges.contains(&e) {
                edges.push(e);
                graph = Self::new(n_agents, &edges)?;
            }
            k += 1;
        }
        Ok(graph)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonically ordered edge list, `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of agent `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Degree `|𝒩_i|`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_agents).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// BFS connectivity check.
    pub fn is_connected(&self) -> bool {
        if self.n_agents == 0 {
            return false;
        }
        let mut seen = vec![false; self.n_agents];
        let mut queue = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push(w);
                }
            }
        }
        count == self.n_agents
    }

    /// Serializes to the edge-list text format: a header line `agents N`
    /// followed by one `i j` pair per line in canonical order.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("agents {}\n", self.n_agents);
        for &(i, j) in &self.edges {
            out.push_str(&format!("{} {}\n", i, j));
        }
        out
    }

    /// Parses the edge-list text format produced by [`Graph::to_edge_list`].
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Parse("empty input".into()))?;
        let mut parts = header.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("agents"), Some(n), None) => {
                let n_agents: usize = n
                    .parse()
                    .map_err(|_| GraphError::Parse(format!("bad agent count '{n}'")))?;
                let mut edges = Vec::new();
                for line in lines {
                    let mut it = line.split_whitespace();
                    let (i, j) = match (it.next(), it.next(), it.next()) {
                        (Some(i), Some(j), None) => (i, j),
                        _ => return Err(GraphError::Parse(format!("bad edge line '{line}'"))),
                    };
                    let i: usize = i
                        .parse()
                        .map_err(|_| GraphError::Parse(format!("bad index '{i}'")))?;
                    let j: usize = j
                        .parse()
                        .map_err(|_| GraphError::Parse(format!("bad index '{j}'")))?;
                    edges.push((i, j));
                }
                Self::new(n_agents, &edges)
            }
            _ => Err(GraphError::Parse(format!(
                "expected header 'agents N', got '{header}'"
            ))),
        }
    }
}

/// Incidence, degree, and Laplacian matrices of a graph, plus the dual block
/// size `M` used for Kronecker expansions.
///
/// The base `N×N` (and `|E|×N`) matrices are stored; expanded versions are
/// produced on demand because they are only needed by dense test oracles and
/// the potential-function evaluator.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    graph: Graph,
    block_size: usize,
    incidence: DMatrix<f64>,
    degree: DMatrix<f64>,
    signed_laplacian: DMatrix<f64>,
    signless_laplacian: DMatrix<f64>,
}

/// Kronecker product with the identity: `B ⊗ I_m`.
pub fn kron_identity(base: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let (r, c) = base.shape();
    let mut out = DMatrix::zeros(r * m, c * m);
    for i in 0..r {
        for j in 0..c {
            let v = base[(i, j)];
            if v != 0.0 {
                for k in 0..m {
                    out[(i * m + k, j * m + k)] = v;
                }
            }
        }
    }
    out
}

impl GraphMatrices {
    /// Derives all base matrices from a graph for dual block size `M ≥ 1`.
    ///
    /// `Ã` has `+1` at the smaller and `−1` at the larger endpoint of each
    /// canonical edge; `L̃⁻ = ÃᵀÃ` and `L̃⁺ = 2D̃ − L̃⁻` are assembled from
    /// integer-valued entries, so the identities hold exactly.
    pub fn derive(graph: &Graph, block_size: usize) -> Self {
        assert!(block_size >= 1, "block size must be at least 1");
        let n = graph.n_agents();
        let e = graph.n_edges();
        let mut incidence = DMatrix::zeros(e, n);
        for (row, &(i, j)) in graph.edges().iter().enumerate() {
            incidence[(row, i)] = 1.0;
            incidence[(row, j)] = -1.0;
        }
        let mut degree = DMatrix::zeros(n, n);
        for i in 0..n {
            degree[(i, i)] = graph.degree(i) as f64;
        }
        let signed_laplacian = incidence.transpose() * &incidence;
        let signless_laplacian = 2.0 * &degree - &signed_laplacian;
        Self {
            graph: graph.clone(),
            block_size,
            incidence,
            degree,
            signed_laplacian,
            signless_laplacian,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Base incidence matrix `Ã` (`|E|×N`).
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Base degree matrix `D̃`.
    pub fn degree(&self) -> &DMatrix<f64> {
        &self.degree
    }

    /// Base signed Laplacian `L̃⁻ = ÃᵀÃ`.
    pub fn signed_laplacian(&self) -> &DMatrix<f64> {
        &self.signed_laplacian
    }

    /// Base signless Laplacian `L̃⁺ = 2D̃ − L̃⁻`.
    pub fn signless_laplacian(&self) -> &DMatrix<f64> {
        &self.signless_laplacian
    }

    /// Expanded incidence `A = Ã ⊗ I_M`.
    pub fn incidence_expanded(&self) -> DMatrix<f64> {
        kron_identity(&self.incidence, self.block_size)
    }

    /// Expanded signed Laplacian `L⁻ = L̃⁻ ⊗ I_M`.
    pub fn signed_laplacian_expanded(&self) -> DMatrix<f64> {
        kron_identity(&self.signed_laplacian, self.block_size)
    }

    /// Expanded signless Laplacian `L⁺ = L̃⁺ ⊗ I_M`.
    pub fn signless_laplacian_expanded(&self) -> DMatrix<f64> {
        kron_identity(&self.signless_laplacian, self.block_size)
    }

    /// Expanded degree matrix `D = D̃ ⊗ I_M`.
    pub fn degree_expanded(&self) -> DMatrix<f64> {
        kron_identity(&self.degree, self.block_size)
    }
}

/// Spectral quantities of the Laplacians that enter the step-size theory.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SpectralSummary {
    /// Largest eigenvalue of `L⁺` (equals that of `L̃⁺`).
    pub lambda_max_plus: f64,
    /// Smallest nonzero singular value of `L⁻`.
    pub sigma_min_minus: f64,
    /// Largest singular value of `L⁻`.
    pub sigma_max_minus: f64,
    /// Whether the graph is connected (`L̃⁻` has a single zero eigenvalue).
    pub connected: bool,
}

/// Computes the spectral summary from the base `N×N` matrices.
///
/// `L̃⁻` is symmetric PSD, so its singular values are its eigenvalues.
/// Connectivity is read off the zero-eigenvalue multiplicity.
pub fn spectral_summary(matrices: &GraphMatrices) -> SpectralSummary {
    let eig_minus = SymmetricEigen::new(matrices.signed_laplacian.clone());
    let eig_plus = SymmetricEigen::new(matrices.signless_laplacian.clone());
    let mut minus: Vec<f64> = eig_minus.eigenvalues.iter().copied().collect();
    minus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_zero = minus.iter().filter(|&&v| v.abs() < ZERO_EIG_TOL).count();
    let connected = n_zero == 1;
    let sigma_min_minus = minus
        .iter()
        .copied()
        .find(|&v| v >= ZERO_EIG_TOL)
        .unwrap_or(0.0);
    let sigma_max_minus = minus.last().copied().unwrap_or(0.0).max(0.0);
    let lambda_max_plus = eig_plus
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    SpectralSummary {
        lambda_max_plus,
        sigma_min_minus,
        sigma_max_minus,
        connected,
    }
}

/// Reference prediction for cycle graphs: the smallest nonzero eigenvalue of
/// the cycle's signed Laplacian is `2 − 2cos(2π/N)`.
pub fn cycle_sigma_min_prediction(n: usize) -> f64 {
    2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos()
}

/// Stacks per-agent blocks of length `m` into one vector (graph block order).
pub fn stack_blocks(blocks: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.len()).copy_from(b);
        at += b.len();
    }
    out
}

/// Splits a stacked vector into `n` equal blocks of length `m`.
pub fn split_blocks(v: &DVector<f64>, n: usize, m: usize) -> Vec<DVector<f64>> {
    assert_eq!(v.len(), n * m, "stacked vector has wrong length");
    (0..n).map(|i| v.rows(i * m, m).into_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn triangle_is_the_three_cycle() {
        let g = Graph::cycle(3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        for i in 0..3 {
            assert_eq!(g.degree(i), 2);
        }
    }

    #[test]
    fn four_cycle_has_four_edges_of_degree_two() {
        let g = Graph::cycle(4).unwrap();
        assert_eq!(g.n_edges(), 4);
        for i in 0..4 {
            assert_eq!(g.degree(i), 2);
        }
    }

    #[test]
    fn six_cycle_sigma_min_is_one() {
        let g = Graph::cycle(6).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        let s = spectral_summary(&m);
        assert_abs_diff_eq!(s.sigma_min_minus, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cycle_rejects_small_n() {
        assert!(Graph::cycle(2).is_err());
    }

    #[test]
    fn two_agents_full_probability_gives_single_edge() {
        let g = Graph::random_connected(2, 1.0, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn random_graph_is_deterministic() {
        let a = Graph::random_connected(25, 0.3, 7).unwrap();
        let b = Graph::random_connected(25, 0.3, 7).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn sparse_random_graph_is_augmented_until_connected() {
        // Probability low enough that the ER sample is essentially empty;
        // the augmentation must still deliver a connected graph.
        let g = Graph::random_connected(25, 1e-12, 1).unwrap();
        assert!(g.is_connected());
        assert!(g.n_edges() >= 24);
    }

    #[test]
    fn two_node_path_matrices_by_hand() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        assert_eq!(m.incidence().as_slice(), &[1.0, -1.0]);
        assert_eq!(m.signed_laplacian(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(m.signless_laplacian(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn four_cycle_laplacian_structure_and_spectrum() {
        let g = Graph::cycle(4).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        let l = m.signed_laplacian();
        for i in 0..4 {
            assert_eq!(l[(i, i)], 2.0);
        }
        assert_eq!(l[(0, 1)], -1.0);
        assert_eq!(l[(0, 3)], -1.0);
        assert_eq!(l[(0, 2)], 0.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(l.clone()).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [0.0, 2.0, 2.0, 4.0];
        for (v, e) in eig.iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn kronecker_expansion_replaces_entries_with_scaled_identities() {
        let g = Graph::cycle(4).unwrap();
        let m = GraphMatrices::derive(&g, 2);
        let base = m.signed_laplacian();
        let big = m.signed_laplacian_expanded();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(big[(2 * i, 2 * j)], base[(i, j)]);
                assert_eq!(big[(2 * i + 1, 2 * j + 1)], base[(i, j)]);
                assert_eq!(big[(2 * i, 2 * j + 1)], 0.0);
                assert_eq!(big[(2 * i + 1, 2 * j)], 0.0);
            }
        }
    }

    #[test]
    fn four_cycle_spectral_summary_hits_degree_bound() {
        let g = Graph::cycle(4).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        let s = spectral_summary(&m);
        assert_abs_diff_eq!(s.lambda_max_plus, 4.0, epsilon = 1e-10);
        assert!(s.lambda_max_plus <= 2.0 * g.max_degree() as f64 + 1e-10);
        assert!(s.connected);
    }

    #[test]
    fn eight_cycle_sigma_min_matches_cosine_formula() {
        let g = Graph::cycle(8).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        let s = spectral_summary(&m);
        assert_abs_diff_eq!(s.sigma_min_minus, 2.0 - 2.0 * (std::f64::consts::PI / 4.0).cos(), epsilon = 1e-12);
    }

    #[test]
    fn two_disjoint_edges_are_disconnected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        let m = GraphMatrices::derive(&g, 1);
        let s = spectral_summary(&m);
        assert!(!s.connected);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::random_connected(9, 0.4, 3).unwrap();
        let text = g.to_edge_list();
        let back = Graph::from_edge_list(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn validation_rejects_bad_edges() {
        assert!(matches!(Graph::new(3, &[(1, 1)]), Err(GraphError::SelfLoop(1))));
        assert!(matches!(
            Graph::new(3, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            Graph::new(3, &[(0, 5)]),
            Err(GraphError::EdgeOutOfRange(0, 5, 3))
        ));
    }

    #[test]
    fn signed_laplacian_nulls_exactly_consensus_vectors() {
        let g = Graph::random_connected(6, 0.4, 11).unwrap();
        let m = GraphMatrices::derive(&g, 2);
        let a = m.incidence_expanded();
        // Equal blocks -> Ay = 0.
        let block = DVector::from_vec(vec![0.3, -1.7]);
        let y = stack_blocks(&vec![block.clone(); 6]);
        assert!((&a * &y).norm() < 1e-12);
        // Perturb one block -> Ay != 0 on a connected graph.
        let mut blocks = vec![block; 6];
        blocks[3][0] += 1.0;
        let y = stack_blocks(&blocks);
        assert!((&a * &y).norm() > 1e-8);
    }
}
