//! Problem data model and instance builders.
//!
//! A coupled problem is the tuple `({fᵢ}, {Bᵢ}, q)`: per-agent smooth
//! objectives `fᵢ : ℝ^{nᵢ} → ℝ` with certified curvature bounds, coupling
//! blocks `Bᵢ ∈ ℝ^{M×nᵢ}`, and the shared right-hand side `q ∈ ℝ^M` of the
//! constraint `Σᵢ Bᵢ xᵢ = q`.
//!
//! Builders cover:
//! - seeded quadratic test instances (the oracle family for solver tests),
//! - the consensus reformulation of a finite sum (`B = Ã⊗I_n`, `q = 0`),
//! - vertical (feature-partitioned) logistic regression with the bounded
//!   non-convex regularizer `R(w) = λ Σ ξw²/(1+ξw²)`,
//! - a toy vertical one-hidden-layer network (ReLU + softmax cross-entropy).
//!
//! A centralized KKT oracle for strongly convex quadratic instances and a
//! central-difference gradient checker round out the module; both exist to
//! let solver outputs be judged against independent ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Graph;

/// Errors from instance construction and the oracles.
#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension must be positive: {0}")]
    BadDimension(String),
    #[error("labels must be ±1 for logistic regression")]
    NonBinaryLabels,
    #[error("labels must be one-hot for the NN builder")]
    NonOneHotLabels,
    #[error("hidden width must be at least 1")]
    BadHiddenWidth,
    #[error("lambda and xi must be positive, got lambda={0}, xi={1}")]
    BadRegularizer(f64, f64),
    #[error("graph must be connected")]
    Disconnected,
    #[error("objectives must share one dimension for the consensus instance")]
    MixedDimensions,
    #[error("aux agent index {0} out of range (N = {1})")]
    AuxOutOfRange(usize, usize),
    #[error("KKT matrix is numerically singular (condition estimate {0:.3e})")]
    SingularKkt(f64),
    #[error("only quadratic objectives supported here (agent {0} is not quadratic)")]
    NotQuadratic(usize),
    #[error("dataset is inconsistent: {0}")]
    BadDataset(String),
    #[error("malformed file: {0}")]
    Parse(String),
}

/// The analytic form of a local objective.
///
/// Keeping the form as data (rather than a closure) lets oracles special-case
/// quadratics, keeps objectives `Clone + Send + Sync`, and makes gradients
/// testable against finite differences uniformly.
#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    /// `½ xᵀQx + cᵀx` with symmetric `Q`.
    Quadratic { q_mat: DMatrix<f64>, c: DVector<f64> },
    /// Bounded non-convex regularizer `λ Σ_s ξ w_s² / (1 + ξ w_s²)`.
    Rattle { lambda: f64, xi: f64 },
    /// Logistic loss `Σ_k log(1 + exp(−v_k u_k))` over its full input.
    Logistic { labels: DVector<f64> },
    /// Identically zero (feature agents of the NN instance).
    Zero,
    /// Disjoint coordinate ranges, each with its own sub-objective:
    /// `(offset, len, kind)` triples covering the variable.
    Split { parts: Vec<(usize, usize, ObjectiveKind)> },
    /// One-hidden-layer classification head over `x = [w₀; vec(V); b]`:
    /// per sample `k`, hidden `h = ReLU(w₀ₖ)`, logits `V h + b`, softmax
    /// cross-entropy against one-hot labels.
    NnHead(NnHead),
}

/// Data of the NN head objective (labels stored one-hot, `M×C`).
#[derive(Debug, Clone)]
pub struct NnHead {
    pub labels: DMatrix<f64>,
    pub m_samples: usize,
    pub k_hidden: usize,
    pub n_classes: usize,
}

impl NnHead {
    /// Input layout: `w₀` is `M·K` (per-sample hidden pre-activations),
    /// then `vec(V)` column-major (`C·K`), then the bias (`C`).
    pub fn dim(&self) -> usize {
        self.m_samples * self.k_hidden + self.n_classes * self.k_hidden + self.n_classes
    }
}

/// A per-agent objective: dimension, certified curvature bounds, analytic form.
///
/// `curvature_lower` is the weak-convexity constant `γ⁻` (possibly negative)
/// and `curvature_upper` the gradient-Lipschitz constant `γ⁺ > 0`:
///
/// ```text
/// ⟨∇f(x)−∇f(x′), x−x′⟩ ≥ γ⁻ ‖x−x′‖²,   ‖∇f(x)−∇f(x′)‖ ≤ γ⁺ ‖x−x′‖.
/// ```
#[derive(Debug, Clone)]
pub struct LocalObjective {
    pub dim: usize,
    pub curvature_lower: f64,
    pub curvature_upper: f64,
    pub kind: ObjectiveKind,
}

fn rattle_value(lambda: f64, xi: f64, x: &DVector<f64>) -> f64 {
    lambda * x.iter().map(|&w| xi * w * w / (1.0 + xi * w * w)).sum::<f64>()
}

fn rattle_grad(lambda: f64, xi: f64, x: &DVector<f64>) -> DVector<f64> {
    x.map(|w| {
        let d = 1.0 + xi * w * w;
        lambda * 2.0 * xi * w / (d * d)
    })
}

/// `log(1 + e^{-t})` computed without overflow for large `|t|`.
fn log1p_exp_neg(t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

fn logistic_value(labels: &DVector<f64>, u: &DVector<f64>) -> f64 {
    labels.iter().zip(u.iter()).map(|(&v, &w)| log1p_exp_neg(v * w)).sum()
}

fn logistic_grad(labels: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        u.len(),
        labels.iter().zip(u.iter()).map(|(&v, &w)| {
            // dψ/du = −v / (1 + e^{v u}), evaluated stably.
            let t = v * w;
            let s = if t >= 0.0 {
                (-t).exp() / (1.0 + (-t).exp())
            } else {
                1.0 / (1.0 + t.exp())
            };
            -v * s
        }),
    )
}

fn nn_head_eval(head: &NnHead, x: &DVector<f64>, want_grad: bool) -> (f64, Option<DVector<f64>>) {
    let (m, k, c) = (head.m_samples, head.k_hidden, head.n_classes);
    let w0 = x.rows(0, m * k);
    let v = DMatrix::from_column_slice(c, k, x.rows(m * k, c * k).as_slice());
    let bias = x.rows(m * k + c * k, c);
    let mut loss = 0.0;
    let mut grad = if want_grad { Some(DVector::zeros(x.len())) } else { None };
    for s in 0..m {
        let pre = w0.rows(s * k, k);
        let h = pre.map(|t| t.max(0.0));
        let mut logits = &v * &h + bias;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&t| (t - max).exp()).sum::<f64>().ln();
        let target = head.labels.row(s).transpose();
        loss += lse - logits.dot(&target);
        if let Some(g) = grad.as_mut() {
            // d logits = softmax − one-hot.
            for t in logits.iter_mut() {
                *t = (*t - lse).exp();
            }
            let dl = logits - target;
            let dh = v.transpose() * &dl;
            for j in 0..k {
                if pre[j] > 0.0 {
                    g[s * k + j] += dh[j];
                }
            }
            for col in 0..k {
                for row in 0..c {
                    g[m * k + col * c + row] += dl[row] * h[col];
                }
            }
            for row in 0..c {
                g[m * k + c * k + row] += dl[row];
            }
        }
    }
    (loss, grad)
}

impl LocalObjective {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        Self::kind_value(&self.kind, x)
    }

    fn kind_value(kind: &ObjectiveKind, x: &DVector<f64>) -> f64 {
        match kind {
            ObjectiveKind::Quadratic { q_mat, c } => 0.5 * x.dot(&(q_mat * x)) + c.dot(x),
            ObjectiveKind::Rattle { lambda, xi } => rattle_value(*lambda, *xi, x),
            ObjectiveKind::Logistic { labels } => logistic_value(labels, x),
            ObjectiveKind::Zero => 0.0,
            ObjectiveKind::Split { parts } => parts
                .iter()
                .map(|(off, len, k)| Self::kind_value(k, &x.rows(*off, *len).into_owned()))
                .sum(),
            ObjectiveKind::NnHead(head) => nn_head_eval(head, x, false).0,
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim);
        Self::kind_gradient(&self.kind, x)
    }

    fn kind_gradient(kind: &ObjectiveKind, x: &DVector<f64>) -> DVector<f64> {
        match kind {
            ObjectiveKind::Quadratic { q_mat, c } => q_mat * x + c,
            ObjectiveKind::Rattle { lambda, xi } => rattle_grad(*lambda, *xi, x),
            ObjectiveKind::Logistic { labels } => logistic_grad(labels, x),
            ObjectiveKind::Zero => DVector::zeros(x.len()),
            ObjectiveKind::Split { parts } => {
                let mut g = DVector::zeros(x.len());
                for (off, len, k) in parts {
                    let sub = Self::kind_gradient(k, &x.rows(*off, *len).into_owned());
                    g.rows_mut(*off, *len).copy_from(&sub);
                }
                g
            }
            ObjectiveKind::NnHead(head) => nn_head_eval(head, x, true).1.unwrap(),
        }
    }

    /// Quadratic data `(Q, c)` if this objective is a plain quadratic.
    pub fn quadratic_data(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.kind {
            ObjectiveKind::Quadratic { q_mat, c } => Some((q_mat, c)),
            _ => None,
        }
    }
}

/// The coupled problem `min Σᵢ fᵢ(xᵢ)  s.t.  Σᵢ Bᵢ xᵢ = q`.
#[derive(Debug, Clone)]
pub struct CoupledProblem {
    pub objectives: Vec<LocalObjective>,
    /// Coupling blocks `Bᵢ`, all with `M` rows.
    pub coupling: Vec<DMatrix<f64>>,
    /// Right-hand side `q ∈ ℝ^M`.
    pub rhs: DVector<f64>,
    /// `max_i ‖Bᵢ‖` (spectral norm), cached at construction.
    pub b_max: f64,
    /// Set when an objective violates the smoothness assumption (ReLU head);
    /// its curvature bounds are then sampled surrogates, not certificates.
    pub outside_smoothness_assumption: bool,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

impl CoupledProblem {
    /// Assembles the tuple and caches `B_max`, validating shapes.
    pub fn new(
        objectives: Vec<LocalObjective>,
        coupling: Vec<DMatrix<f64>>,
        rhs: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        if objectives.len() != coupling.len() || objectives.is_empty() {
            return Err(ProblemError::BadDataset(
                "objective and coupling counts differ or are empty".into(),
            ));
        }
        let m = rhs.len();
        for (i, (obj, b)) in objectives.iter().zip(coupling.iter()).enumerate() {
            if b.nrows() != m {
                return Err(ProblemError::BadDataset(format!(
                    "B_{i} has {} rows, expected {m}",
                    b.nrows()
                )));
            }
            if b.ncols() != obj.dim {
                return Err(ProblemError::BadDataset(format!(
                    "B_{i} has {} cols but f_{i} has dim {}",
                    b.ncols(),
                    obj.dim
                )));
            }
        }
        let b_max = coupling.iter().map(spectral_norm).fold(0.0, f64::max);
        Ok(Self {
            objectives,
            coupling,
            rhs,
            b_max,
            outside_smoothness_assumption: false,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.objectives.len()
    }

    /// Number of coupling rows `M`.
    pub fn m_constraints(&self) -> usize {
        self.rhs.len()
    }

    /// Total primal dimension `Σᵢ nᵢ`.
    pub fn total_dim(&self) -> usize {
        self.objectives.iter().map(|o| o.dim).sum()
    }

    /// Worst weak-convexity constant `γ⁻ = minᵢ γᵢ⁻`.
    pub fn gamma_minus(&self) -> f64 {
        self.objectives
            .iter()
            .map(|o| o.curvature_lower)
            .fold(f64::INFINITY, f64::min)
    }

    /// Worst gradient-Lipschitz constant `γ⁺ = maxᵢ γᵢ⁺`.
    pub fn gamma_plus(&self) -> f64 {
        self.objectives
            .iter()
            .map(|o| o.curvature_upper)
            .fold(0.0, f64::max)
    }

    /// Horizontal concatenation `B = [B₁, …, B_N]` (`M × Σnᵢ`).
    pub fn coupling_assembled(&self) -> DMatrix<f64> {
        let m = self.m_constraints();
        let mut out = DMatrix::zeros(m, self.total_dim());
        let mut at = 0;
        for b in &self.coupling {
            out.columns_mut(at, b.ncols()).copy_from(b);
            at += b.ncols();
        }
        out
    }

    /// Block diagonal `B_diag = diag(B₁, …, B_N)` (`NM × Σnᵢ`).
    pub fn coupling_block_diag(&self) -> DMatrix<f64> {
        let m = self.m_constraints();
        let mut out = DMatrix::zeros(self.n_agents() * m, self.total_dim());
        let mut at = 0;
        for (i, b) in self.coupling.iter().enumerate() {
            out.view_mut((i * m, at), (m, b.ncols())).copy_from(b);
            at += b.ncols();
        }
        out
    }

    /// Constraint residual `Σᵢ Bᵢ xᵢ − q` for stacked-per-agent blocks.
    pub fn constraint_residual(&self, x: &[DVector<f64>]) -> DVector<f64> {
        let mut r = -self.rhs.clone();
        for (b, xi) in self.coupling.iter().zip(x) {
            r += b * xi;
        }
        r
    }

    pub fn is_quadratic(&self) -> bool {
        self.objectives.iter().all(|o| o.quadratic_data().is_some())
    }

    /// Recomputes `max_i ‖Bᵢ‖` from scratch (invariant check helper).
    pub fn recompute_b_max(&self) -> f64 {
        self.coupling.iter().map(spectral_norm).fold(0.0, f64::max)
    }
}

/// A feature-partitioned dataset: every agent holds all `M` samples but only
/// its own column slice of the feature matrix.
#[derive(Debug, Clone)]
pub struct VerticalDataset {
    /// `M × Σnᵢ`, sample `k` in row `k`.
    pub features: DMatrix<f64>,
    pub labels: Labels,
    /// Per-agent half-open column ranges `[start, end)`, disjoint and
    /// exhaustive in order.
    pub partition: Vec<(usize, usize)>,
}

/// Labels: `±1` for binary classification, one-hot rows (`M × C`) otherwise.
#[derive(Debug, Clone)]
pub enum Labels {
    Binary(DVector<f64>),
    OneHot(DMatrix<f64>),
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; both uniforms drawn unconditionally to keep the stream
    // length deterministic.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl VerticalDataset {
    fn check(self) -> Result<Self, ProblemError> {
        let m = self.features.nrows();
        let label_rows = match &self.labels {
            Labels::Binary(v) => v.len(),
            Labels::OneHot(h) => h.nrows(),
        };
        if label_rows != m {
            return Err(ProblemError::BadDataset(format!(
                "{label_rows} labels for {m} samples"
            )));
        }
        let mut at = 0;
        for &(s, e) in &self.partition {
            if s != at || e <= s {
                return Err(ProblemError::BadDataset(
                    "partition ranges must be disjoint, exhaustive, in order".into(),
                ));
            }
            at = e;
        }
        if at != self.features.ncols() {
            return Err(ProblemError::BadDataset(
                "partition does not cover all feature columns".into(),
            ));
        }
        Ok(self)
    }

    /// Seeded two-class Gaussian mixture with ±1 labels: sample `k` is
    /// `v_k·μ + 0.5·noise` for a fixed random direction `μ`, so the classes
    /// are linearly separable in expectation.
    pub fn synthetic_binary(
        seed: u64,
        n_agents: usize,
        n_per_agent: usize,
        m_samples: usize,
    ) -> Result<Self, ProblemError> {
        if n_agents == 0 || n_per_agent == 0 || m_samples == 0 {
            return Err(ProblemError::BadDimension("dataset dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_total = n_agents * n_per_agent;
        let mean: Vec<f64> = (0..n_total)
            .map(|_| gaussian(&mut rng) / (n_total as f64).sqrt())
            .collect();
        let mut features = DMatrix::zeros(m_samples, n_total);
        let mut labels = DVector::zeros(m_samples);
        for k in 0..m_samples {
            let v = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            labels[k] = v;
            for j in 0..n_total {
                features[(k, j)] = v * mean[j] + 0.5 * gaussian(&mut rng);
            }
        }
        let partition = (0..n_agents)
            .map(|i| (i * n_per_agent, (i + 1) * n_per_agent))
            .collect();
        Self {
            features,
            labels: Labels::Binary(labels),
            partition,
        }
        .check()
    }

    /// Seeded `C`-class Gaussian mixture with one-hot labels.
    pub fn synthetic_one_hot(
        seed: u64,
        n_agents: usize,
        n_per_agent: usize,
        m_samples: usize,
        n_classes: usize,
    ) -> Result<Self, ProblemError> {
        if n_agents == 0 || n_per_agent == 0 || m_samples == 0 || n_classes < 2 {
            return Err(ProblemError::BadDimension("dataset dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_total = n_agents * n_per_agent;
        let means: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| {
                (0..n_total)
                    .map(|_| gaussian(&mut rng) / (n_total as f64).sqrt())
                    .collect()
            })
            .collect();
        let mut features = DMatrix::zeros(m_samples, n_total);
        let mut one_hot = DMatrix::zeros(m_samples, n_classes);
        for k in 0..m_samples {
            let class = rng.gen_range(0..n_classes);
            one_hot[(k, class)] = 1.0;
            for j in 0..n_total {
                features[(k, j)] = means[class][j] + 0.5 * gaussian(&mut rng);
            }
        }
        let partition = (0..n_agents)
            .map(|i| (i * n_per_agent, (i + 1) * n_per_agent))
            .collect();
        Self {
            features,
            labels: Labels::OneHot(one_hot),
            partition,
        }
        .check()
    }

    /// Serializes samples to CSV with header `label, f0, f1, …`; one-hot
    /// labels are stored as the class index.
    pub fn to_csv(&self) -> String {
        let n = self.features.ncols();
        let mut out = String::from("label");
        for j in 0..n {
            out.push_str(&format!(", f{j}"));
        }
        out.push('\n');
        for k in 0..self.features.nrows() {
            let label = match &self.labels {
                Labels::Binary(v) => v[k],
                Labels::OneHot(h) => h.row(k).iter().position(|&x| x == 1.0).unwrap_or(0) as f64,
            };
            out.push_str(&format!("{label}"));
            for j in 0..n {
                out.push_str(&format!(", {}", self.features[(k, j)]));
            }
            out.push('\n');
        }
        out
    }

    /// Serializes the partition as `agent, col_start, col_end` lines with
    /// half-open `[col_start, col_end)` ranges.
    pub fn partition_to_csv(&self) -> String {
        let mut out = String::new();
        for (i, &(s, e)) in self.partition.iter().enumerate() {
            out.push_str(&format!("{i}, {s}, {e}\n"));
        }
        out
    }

    /// Parses the CSV pair produced by [`Self::to_csv`]/[`Self::partition_to_csv`].
    ///
    /// Labels that are all `±1` become binary; otherwise values are read as
    /// class indices and one-hot encoded.
    pub fn from_csv(data: &str, partition: &str) -> Result<Self, ProblemError> {
        let mut lines = data.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ProblemError::Parse("empty dataset".into()))?;
        if !header.trim_start().starts_with("label") {
            return Err(ProblemError::Parse("expected 'label, f0, …' header".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let vals: Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            rows.push(vals.map_err(|e| ProblemError::Parse(format!("{e} in '{line}'")))?);
        }
        if rows.is_empty() {
            return Err(ProblemError::Parse("no samples".into()));
        }
        let n = rows[0].len() - 1;
        if rows.iter().any(|r| r.len() != n + 1) {
            return Err(ProblemError::Parse("ragged rows".into()));
        }
        let m = rows.len();
        let mut features = DMatrix::zeros(m, n);
        let mut raw_labels = Vec::with_capacity(m);
        for (k, r) in rows.iter().enumerate() {
            raw_labels.push(r[0]);
            for j in 0..n {
                features[(k, j)] = r[j + 1];
            }
        }
        let labels = if raw_labels.iter().all(|&v| v == 1.0 || v == -1.0) {
            Labels::Binary(DVector::from_vec(raw_labels))
        } else {
            let classes = raw_labels.iter().map(|&v| v as usize).max().unwrap() + 1;
            let mut one_hot = DMatrix::zeros(m, classes);
            for (k, &v) in raw_labels.iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(ProblemError::Parse(format!("bad class label {v}")));
                }
                one_hot[(k, v as usize)] = 1.0;
            }
            Labels::OneHot(one_hot)
        };
        let mut ranges = Vec::new();
        for line in partition.lines().filter(|l| !l.trim().is_empty()) {
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            if vals.len() != 3 {
                return Err(ProblemError::Parse(format!("bad partition line '{line}'")));
            }
            let idx: usize = vals[0].parse().map_err(|_| ProblemError::Parse(line.into()))?;
            let s: usize = vals[1].parse().map_err(|_| ProblemError::Parse(line.into()))?;
            let e: usize = vals[2].parse().map_err(|_| ProblemError::Parse(line.into()))?;
            if idx != ranges.len() {
                return Err(ProblemError::Parse("partition lines out of order".into()));
            }
            ranges.push((s, e));
        }
        Self {
            features,
            labels,
            partition: ranges,
        }
        .check()
    }

    pub fn n_agents(&self) -> usize {
        self.partition.len()
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Agent `i`'s feature slice (`M × nᵢ`).
    pub fn agent_features(&self, i: usize) -> DMatrix<f64> {
        let (s, e) = self.partition[i];
        self.features.columns(s, e - s).into_owned()
    }
}

/// Seeded quadratic instance: `fᵢ(x) = ½xᵀQᵢx + cᵢᵀx` with the spectrum of
/// each `Qᵢ` placed exactly in `[convexity_shift, convexity_shift+1]`, dense
/// Gaussian coupling blocks, and a Gaussian right-hand side.
///
/// The extreme eigenvalues are pinned, so `γ⁻ = convexity_shift` exactly and
/// `γ⁺ = max(|γ⁻|, convexity_shift+1)`.
pub fn build_quadratic_instance(
    seed: u64,
    n_agents: usize,
    n_local: usize,
    m_constraints: usize,
    convexity_shift: f64,
) -> Result<CoupledProblem, ProblemError> {
    if n_agents == 0 || n_local == 0 || m_constraints == 0 {
        return Err(ProblemError::BadDimension("instance dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objectives = Vec::with_capacity(n_agents);
    let mut coupling = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        // Random orthogonal basis via QR of a Gaussian matrix.
        let gauss = DMatrix::from_fn(n_local, n_local, |_, _| gaussian(&mut rng));
        let u = gauss.qr().q();
        let mut eigs = DVector::from_fn(n_local, |_, _| convexity_shift + rng.gen::<f64>());
        eigs[0] = convexity_shift;
        if n_local > 1 {
            eigs[n_local - 1] = convexity_shift + 1.0;
        }
        let q_mat = &u * DMatrix::from_diagonal(&eigs) * u.transpose();
        // Symmetrize away the last bits of factorization noise.
        let q_mat = 0.5 * (&q_mat + q_mat.transpose());
        let c = DVector::from_fn(n_local, |_, _| gaussian(&mut rng));
        let lo = eigs.min();
        let hi = eigs.max();
        objectives.push(LocalObjective {
            dim: n_local,
            curvature_lower: lo,
            curvature_upper: lo.abs().max(hi.abs()),
            kind: ObjectiveKind::Quadratic { q_mat, c },
        });
        let scale = 1.0 / (m_constraints.max(n_local) as f64).sqrt();
        coupling.push(DMatrix::from_fn(m_constraints, n_local, |_, _| {
            scale * gaussian(&mut rng)
        }));
    }
    let rhs = DVector::from_fn(m_constraints, |_, _| gaussian(&mut rng));
    CoupledProblem::new(objectives, coupling, rhs)
}

/// Consensus reformulation of `min Σᵢ fᵢ(x)`: every agent gets its own copy,
/// coupled through the incidence matrix. `Bᵢ` is column block `i` of
/// `Ã ⊗ I_n` and `q = 0`, so `Σᵢ Bᵢ xᵢ = 0 ⇔ x₁ = ⋯ = x_N` on a connected
/// graph.
pub fn build_consensus_instance(
    objectives: Vec<LocalObjective>,
    graph: &Graph,
) -> Result<CoupledProblem, ProblemError> {
    if !graph.is_connected() {
        return Err(ProblemError::Disconnected);
    }
    let n = objectives.len();
    if n != graph.n_agents() {
        return Err(ProblemError::BadDataset(
            "objective count differs from agent count".into(),
        ));
    }
    let dim = objectives[0].dim;
    if objectives.iter().any(|o| o.dim != dim) {
        return Err(ProblemError::MixedDimensions);
    }
    let rows = graph.n_edges() * dim;
    let mut coupling = Vec::with_capacity(n);
    for i in 0..n {
        let mut b = DMatrix::zeros(rows, dim);
        for (e, &(a, c)) in graph.edges().iter().enumerate() {
            let sign = if i == a {
                1.0
            } else if i == c {
                -1.0
            } else {
                continue;
            };
            for t in 0..dim {
                b[(e * dim + t, t)] = sign;
            }
        }
        coupling.push(b);
    }
    CoupledProblem::new(objectives, coupling, DVector::zeros(rows))
}

/// Vertical logistic regression with the bounded non-convex regularizer.
///
/// Agent `i` owns its feature slice's weights `wᵢ` with objective
/// `Rᵢ(wᵢ) = λ Σ_s ξw²/(1+ξw²)` and coupling `Bᵢ = [b_{i,1}, …, b_{i,M}]ᵀ`;
/// the designated aux agent additionally owns the per-sample margins
/// `w₀ ∈ ℝ^M` with the logistic loss `Ψ(w₀) = Σ_k log(1+e^{−v_k w₀ₖ})` and
/// coupling block `−I_M`. The constraint `Σᵢ Bᵢwᵢ − w₀ = 0` then pins
/// `w₀ₖ = Σᵢ b_{i,k}ᵀwᵢ`.
///
/// Curvature: `γ⁺ = 1/4` per coordinate for `Ψ`, and the safe enclosure
/// `γ⁺ = 2λξ`, `γ⁻ = −2λξ` for `Rᵢ` (`|R''| ≤ 2λξ`).
pub fn build_vertical_lr(
    data: &VerticalDataset,
    lambda: f64,
    xi: f64,
    aux_agent: usize,
) -> Result<CoupledProblem, ProblemError> {
    let labels = match &data.labels {
        Labels::Binary(v) => v.clone(),
        Labels::OneHot(_) => return Err(ProblemError::NonBinaryLabels),
    };
    if !(lambda > 0.0 && xi > 0.0) {
        return Err(ProblemError::BadRegularizer(lambda, xi));
    }
    let n = data.n_agents();
    if aux_agent >= n {
        return Err(ProblemError::AuxOutOfRange(aux_agent, n));
    }
    let m = data.n_samples();
    let reg_curv = 2.0 * lambda * xi;
    let mut objectives = Vec::with_capacity(n);
    let mut coupling = Vec::with_capacity(n);
    for i in 0..n {
        let feats = data.agent_features(i);
        let ni = feats.ncols();
        if i == aux_agent {
            let mut b = DMatrix::zeros(m, ni + m);
            b.columns_mut(0, ni).copy_from(&feats);
            for k in 0..m {
                b[(k, ni + k)] = -1.0;
            }
            objectives.push(LocalObjective {
                dim: ni + m,
                curvature_lower: -reg_curv,
                curvature_upper: reg_curv.max(0.25),
                kind: ObjectiveKind::Split {
                    parts: vec![
                        (0, ni, ObjectiveKind::Rattle { lambda, xi }),
                        (
                            ni,
                            m,
                            ObjectiveKind::Logistic {
                                labels: labels.clone(),
                            },
                        ),
                    ],
                },
            });
            coupling.push(b);
        } else {
            objectives.push(LocalObjective {
                dim: ni,
                curvature_lower: -reg_curv,
                curvature_upper: reg_curv,
                kind: ObjectiveKind::Rattle { lambda, xi },
            });
            coupling.push(feats);
        }
    }
    CoupledProblem::new(objectives, coupling, DVector::zeros(m))
}

/// Toy vertical one-hidden-layer network.
///
/// Feature agent `i` owns `wᵢ = vec(Wᵢ)` (hidden weights for its columns,
/// zero local objective) with `Bᵢ = [b_{i,1}ᵀ⊗I_K; …; b_{i,M}ᵀ⊗I_K]`
/// (`MK × nᵢK`). The aux agent additionally owns the per-sample hidden
/// pre-activations `w₀ ∈ ℝ^{MK}` and the head parameters `θ = (V, bias)`:
/// its coupling carries `−I_{MK}` on `w₀` and zero columns on `θ`, so the
/// constraint pins `w₀ₖ = Σᵢ Wᵢ b_{i,k}`. The head applies ReLU, a linear
/// layer, and softmax cross-entropy.
///
/// The ReLU head violates the smoothness assumption; its curvature bounds
/// are seeded sampling surrogates and the instance is flagged accordingly.
pub fn build_vertical_nn(
    data: &VerticalDataset,
    hidden: usize,
    aux_agent: usize,
    seed: u64,
) -> Result<CoupledProblem, ProblemError> {
    let one_hot = match &data.labels {
        Labels::OneHot(h) => h.clone(),
        Labels::Binary(_) => return Err(ProblemError::NonOneHotLabels),
    };
    if hidden < 1 {
        return Err(ProblemError::BadHiddenWidth);
    }
    let n = data.n_agents();
    if aux_agent >= n {
        return Err(ProblemError::AuxOutOfRange(aux_agent, n));
    }
    let m = data.n_samples();
    let k = hidden;
    let c = one_hot.ncols();
    let head = NnHead {
        labels: one_hot,
        m_samples: m,
        k_hidden: k,
        n_classes: c,
    };
    let head_dim = head.dim();
    // Sampled curvature surrogate for the non-smooth head.
    let (head_lo, head_hi) = sampled_curvature(
        &LocalObjective {
            dim: head_dim,
            curvature_lower: 0.0,
            curvature_upper: 1.0,
            kind: ObjectiveKind::NnHead(head.clone()),
        },
        seed,
    );
    let kron_rows = |feats: &DMatrix<f64>| -> DMatrix<f64> {
        let ni = feats.ncols();
        let mut b = DMatrix::zeros(m * k, ni * k);
        for s in 0..m {
            for j in 0..ni {
                let v = feats[(s, j)];
                for t in 0..k {
                    b[(s * k + t, j * k + t)] = v;
                }
            }
        }
        b
    };
    let mut objectives = Vec::with_capacity(n);
    let mut coupling = Vec::with_capacity(n);
    for i in 0..n {
        let feats = data.agent_features(i);
        let ni = feats.ncols();
        let bk = kron_rows(&feats);
        if i == aux_agent {
            let mut b = DMatrix::zeros(m * k, ni * k + head_dim);
            b.columns_mut(0, ni * k).copy_from(&bk);
            for t in 0..m * k {
                b[(t, ni * k + t)] = -1.0;
            }
            // Zero columns on (V, bias) follow automatically.
            objectives.push(LocalObjective {
                dim: ni * k + head_dim,
                curvature_lower: head_lo,
                curvature_upper: head_hi,
                kind: ObjectiveKind::Split {
                    parts: vec![
                        (0, ni * k, ObjectiveKind::Zero),
                        (ni * k, head_dim, ObjectiveKind::NnHead(head.clone())),
                    ],
                },
            });
            coupling.push(b);
        } else {
            objectives.push(LocalObjective {
                dim: ni * k,
                curvature_lower: 0.0,
                curvature_upper: 0.0,
                kind: ObjectiveKind::Zero,
            });
            coupling.push(bk);
        }
    }
    let mut problem = CoupledProblem::new(objectives, coupling, DVector::zeros(m * k))?;
    problem.outside_smoothness_assumption = true;
    Ok(problem)
}

/// Estimates curvature bounds by sampling gradient differences on random
/// pairs, with a 50% safety margin. Used only for objectives outside the
/// smoothness assumption.
fn sampled_curvature(obj: &LocalObjective, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..200 {
        let x = DVector::from_fn(obj.dim, |_, _| gaussian(&mut rng));
        let d = DVector::from_fn(obj.dim, |_, _| gaussian(&mut rng));
        let x2 = &x + 1e-2 * &d;
        let dg = obj.gradient(&x2) - obj.gradient(&x);
        let dx = &x2 - &x;
        let nx2 = dx.norm_squared();
        lo = lo.min(dg.dot(&dx) / nx2);
        hi = hi.max(dg.norm() / nx2.sqrt());
    }
    (if lo < 0.0 { 1.5 * lo } else { lo / 1.5 }, 1.5 * hi)
}

/// Worst-coordinate relative error between the analytic gradient and central
/// finite differences at `point`.
pub fn finite_diff_check(obj: &LocalObjective, point: &DVector<f64>, step: f64) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    let g = obj.gradient(point);
    let mut worst: f64 = 0.0;
    for j in 0..obj.dim {
        let mut plus = point.clone();
        let mut minus = point.clone();
        plus[j] += step;
        minus[j] -= step;
        let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * step);
        let denom = g[j].abs().max(fd.abs()).max(1.0);
        worst = worst.max((g[j] - fd).abs() / denom);
    }
    worst
}

/// Centralized KKT oracle for quadratic instances: solves
///
/// ```text
/// Qᵢ xᵢ + cᵢ + Bᵢᵀ y = 0   (∀i),      Σᵢ Bᵢ xᵢ = q
/// ```
///
/// as one dense symmetric-indefinite linear system. Returns per-agent primal
/// blocks and the multiplier `y`. A numerically singular KKT matrix is
/// reported with its condition estimate.
pub fn kkt_oracle_quadratic(
    problem: &CoupledProblem,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), ProblemError> {
    let n_total = problem.total_dim();
    let m = problem.m_constraints();
    let dim = n_total + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let mut at = 0;
    for (i, obj) in problem.objectives.iter().enumerate() {
        let (q_mat, c) = obj
            .quadratic_data()
            .ok_or(ProblemError::NotQuadratic(i))?;
        kkt.view_mut((at, at), (obj.dim, obj.dim)).copy_from(q_mat);
        let b = &problem.coupling[i];
        kkt.view_mut((at, n_total), (obj.dim, m))
            .copy_from(&b.transpose());
        kkt.view_mut((n_total, at), (m, obj.dim)).copy_from(b);
        rhs.rows_mut(at, obj.dim).copy_from(&(-c));
        at += obj.dim;
    }
    rhs.rows_mut(n_total, m).copy_from(&problem.rhs);
    let svd = kkt.clone().svd(false, false);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[svd.singular_values.len() - 1];
    if smin <= 1e-12 * smax {
        return Err(ProblemError::SingularKkt(smax / smin.max(f64::MIN_POSITIVE)));
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(ProblemError::SingularKkt(f64::INFINITY))?;
    let mut x = Vec::with_capacity(problem.n_agents());
    let mut at = 0;
    for obj in &problem.objectives {
        x.push(sol.rows(at, obj.dim).into_owned());
        at += obj.dim;
    }
    let y = sol.rows(n_total, m).into_owned();
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_builder_places_spectrum_and_is_deterministic() {
        let a = build_quadratic_instance(3, 4, 3, 2, 1.0).unwrap();
        let b = build_quadratic_instance(3, 4, 3, 2, 1.0).unwrap();
        for (oa, ob) in a.objectives.iter().zip(&b.objectives) {
            assert_eq!(oa.quadratic_data().unwrap().0, ob.quadratic_data().unwrap().0);
            assert!(oa.curvature_lower >= 1.0 - 1e-12);
        }
        assert_eq!(a.coupling, b.coupling);
        let shifted = build_quadratic_instance(5, 4, 3, 2, -0.5).unwrap();
        assert!(shifted.gamma_minus() < 0.0);
    }

    #[test]
    fn two_node_consensus_blocks_by_hand() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let objectives = (0..2)
            .map(|_| LocalObjective {
                dim: 1,
                curvature_lower: 1.0,
                curvature_upper: 1.0,
                kind: ObjectiveKind::Quadratic {
                    q_mat: DMatrix::identity(1, 1),
                    c: DVector::zeros(1),
                },
            })
            .collect();
        let p = build_consensus_instance(objectives, &g).unwrap();
        assert_eq!(p.coupling[0], DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(p.coupling[1], DMatrix::from_row_slice(1, 1, &[-1.0]));
        assert_eq!(p.rhs, DVector::zeros(1));
    }

    #[test]
    fn three_cycle_consensus_residual_by_hand() {
        let g = Graph::cycle(3).unwrap();
        let objectives = (0..3)
            .map(|_| LocalObjective {
                dim: 1,
                curvature_lower: 0.0,
                curvature_upper: 1.0,
                kind: ObjectiveKind::Zero,
            })
            .collect();
        let p = build_consensus_instance(objectives, &g).unwrap();
        let x = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![2.0]),
            DVector::from_vec(vec![3.0]),
        ];
        // Edges (0,1), (0,2), (1,2): residual (x0−x1, x0−x2, x1−x2).
        assert_eq!(
            p.constraint_residual(&x),
            DVector::from_vec(vec![-1.0, -2.0, -1.0])
        );
        // Equal blocks are feasible.
        let x = vec![DVector::from_vec(vec![5.0]); 3];
        assert!(p.constraint_residual(&x).norm() < 1e-15);
    }

    #[test]
    fn logistic_gradient_reference_values() {
        let labels = DVector::from_vec(vec![1.0]);
        let g = logistic_grad(&labels, &DVector::zeros(1));
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn rattle_gradient_reference_values() {
        let g0 = rattle_grad(0.01, 0.5, &DVector::zeros(1));
        assert_eq!(g0[0], 0.0);
        let g1 = rattle_grad(0.01, 0.5, &DVector::from_vec(vec![1.0]));
        assert_abs_diff_eq!(g1[0], 0.01 / 2.25, epsilon = 1e-15);
    }

    #[test]
    fn vertical_lr_shapes_and_reformulation_identity() {
        let data = VerticalDataset::synthetic_binary(1, 3, 2, 8).unwrap();
        let p = build_vertical_lr(&data, 0.01, 0.5, 0).unwrap();
        assert_eq!(p.n_agents(), 3);
        assert_eq!(p.m_constraints(), 8);
        assert_eq!(p.objectives[0].dim, 2 + 8);
        assert_eq!(p.objectives[1].dim, 2);
        // Reformulated objective at coupled-feasible w0 equals the original.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(2, |_, _| gaussian(&mut rng)))
            .collect();
        let margins = DVector::from_fn(8, |k, _| {
            (0..3).map(|i| data.agent_features(i).row(k).transpose().dot(&w[i])).sum()
        });
        let labels = match &data.labels {
            Labels::Binary(v) => v.clone(),
            _ => unreachable!(),
        };
        let original: f64 = logistic_value(&labels, &margins)
            + w.iter().map(|wi| rattle_value(0.01, 0.5, wi)).sum::<f64>();
        let mut x0 = DVector::zeros(10);
        x0.rows_mut(0, 2).copy_from(&w[0]);
        x0.rows_mut(2, 8).copy_from(&margins);
        let reformulated = p.objectives[0].value(&x0)
            + p.objectives[1].value(&w[1])
            + p.objectives[2].value(&w[2]);
        assert_abs_diff_eq!(original, reformulated, epsilon = 1e-10 * original.abs().max(1.0));
        // And the coupled point is feasible.
        let xs = vec![x0, w[1].clone(), w[2].clone()];
        assert!(p.constraint_residual(&xs).norm() < 1e-12);
    }

    #[test]
    fn vertical_lr_rejects_one_hot_labels() {
        let data = VerticalDataset::synthetic_one_hot(1, 2, 2, 6, 3).unwrap();
        assert!(matches!(
            build_vertical_lr(&data, 0.01, 0.5, 0),
            Err(ProblemError::NonBinaryLabels)
        ));
    }

    #[test]
    fn vertical_nn_shapes_and_linearity() {
        let data = VerticalDataset::synthetic_one_hot(2, 3, 2, 5, 3).unwrap();
        let k = 4;
        let p = build_vertical_nn(&data, k, 1, 7).unwrap();
        assert!(p.outside_smoothness_assumption);
        assert_eq!(p.m_constraints(), 5 * k);
        // Feature agents: B_i is MK x n_i K.
        assert_eq!(p.coupling[0].shape(), (5 * k, 2 * k));
        // Zero weights give zero hidden pre-activations.
        let x = DVector::zeros(2 * k);
        assert!((&p.coupling[0] * &x).norm() == 0.0);
        // B_i against a direct per-sample computation.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = DVector::from_fn(2 * k, |_, _| gaussian(&mut rng));
        let prod = &p.coupling[0] * &w;
        let feats = data.agent_features(0);
        for s in 0..5 {
            for t in 0..k {
                let direct: f64 = (0..2).map(|j| feats[(s, j)] * w[j * k + t]).sum();
                assert_abs_diff_eq!(prod[s * k + t], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn finite_differences_match_all_objective_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let quad = build_quadratic_instance(1, 1, 4, 3, 0.5).unwrap();
        let x = DVector::from_fn(4, |_, _| gaussian(&mut rng));
        assert!(finite_diff_check(&quad.objectives[0], &x, 1e-5) <= 1e-7);

        let data = VerticalDataset::synthetic_binary(3, 2, 3, 6).unwrap();
        let lr = build_vertical_lr(&data, 0.01, 0.5, 1).unwrap();
        for obj in &lr.objectives {
            let x = DVector::from_fn(obj.dim, |_, _| gaussian(&mut rng));
            assert!(finite_diff_check(obj, &x, 1e-5) <= 1e-5);
        }

        let data = VerticalDataset::synthetic_one_hot(5, 2, 2, 4, 3).unwrap();
        let nn = build_vertical_nn(&data, 3, 0, 13).unwrap();
        // Stay away from ReLU kinks: shift pre-activations off zero.
        let obj = &nn.objectives[0];
        let mut x = DVector::from_fn(obj.dim, |_, _| gaussian(&mut rng));
        for v in x.iter_mut() {
            if v.abs() < 0.1 {
                *v += 0.2_f64.copysign(*v);
            }
        }
        assert!(finite_diff_check(obj, &x, 1e-6) <= 1e-5);
    }

    #[test]
    fn constant_objective_finite_diff_error_is_zero() {
        let obj = LocalObjective {
            dim: 3,
            curvature_lower: 0.0,
            curvature_upper: 0.0,
            kind: ObjectiveKind::Zero,
        };
        assert_eq!(finite_diff_check(&obj, &DVector::zeros(3), 1e-5), 0.0);
    }

    #[test]
    fn kkt_oracle_two_agent_hand_solution() {
        // f_i = x²/2, B_i = [1], q = 2  =>  x* = (1,1), y* = −1.
        let objectives = (0..2)
            .map(|_| LocalObjective {
                dim: 1,
                curvature_lower: 1.0,
                curvature_upper: 1.0,
                kind: ObjectiveKind::Quadratic {
                    q_mat: DMatrix::identity(1, 1),
                    c: DVector::zeros(1),
                },
            })
            .collect();
        let coupling = vec![DMatrix::from_row_slice(1, 1, &[1.0]); 2];
        let p = CoupledProblem::new(objectives, coupling, DVector::from_vec(vec![2.0])).unwrap();
        let (x, y) = kkt_oracle_quadratic(&p).unwrap();
        assert_abs_diff_eq!(x[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn kkt_oracle_zero_data_gives_origin() {
        let mut p = build_quadratic_instance(1, 3, 2, 2, 1.0).unwrap();
        p.rhs.fill(0.0);
        for obj in &mut p.objectives {
            if let ObjectiveKind::Quadratic { c, .. } = &mut obj.kind {
                c.fill(0.0);
            }
        }
        let (x, y) = kkt_oracle_quadratic(&p).unwrap();
        for xi in &x {
            assert!(xi.norm() < 1e-14);
        }
        assert!(y.norm() < 1e-14);
    }

    #[test]
    fn kkt_oracle_residuals_vanish_on_random_instances() {
        for seed in 0..5 {
            let p = build_quadratic_instance(seed, 4, 3, 3, 0.5).unwrap();
            let (x, y) = kkt_oracle_quadratic(&p).unwrap();
            for (i, obj) in p.objectives.iter().enumerate() {
                let station = obj.gradient(&x[i]) + p.coupling[i].transpose() * &y;
                assert!(station.norm_squared() < 1e-16);
            }
            assert!(p.constraint_residual(&x).norm_squared() < 1e-16);
        }
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = VerticalDataset::synthetic_binary(7, 3, 2, 5).unwrap();
        let back = VerticalDataset::from_csv(&data.to_csv(), &data.partition_to_csv()).unwrap();
        assert_eq!(back.partition, data.partition);
        assert_eq!(back.features, data.features);
        match (&back.labels, &data.labels) {
            (Labels::Binary(a), Labels::Binary(b)) => assert_eq!(a, b),
            _ => panic!("label kind changed in round trip"),
        }
    }

    #[test]
    fn curvature_bounds_certified_on_sampled_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = VerticalDataset::synthetic_binary(8, 2, 3, 6).unwrap();
        let problems = [
            build_quadratic_instance(2, 3, 4, 3, -0.5).unwrap(),
            build_vertical_lr(&data, 0.01, 0.5, 0).unwrap(),
        ];
        for p in &problems {
            for obj in &p.objectives {
                for _ in 0..200 {
                    let x = DVector::from_fn(obj.dim, |_, _| 2.0 * gaussian(&mut rng));
                    let d = DVector::from_fn(obj.dim, |_, _| gaussian(&mut rng));
                    let x2 = &x + 0.3 * &d;
                    let dg = obj.gradient(&x2) - obj.gradient(&x);
                    let dx = &x2 - &x;
                    let n2 = dx.norm_squared();
                    assert!(dg.dot(&dx) >= obj.curvature_lower * n2 - 1e-9);
                    assert!(dg.norm() <= obj.curvature_upper * n2.sqrt() + 1e-9);
                }
            }
        }
    }
}
