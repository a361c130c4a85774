//! The synchronous-round PDC/IPDC iteration.
//!
//! One round executes four stages over all agents, with a barrier between
//! stages and every cross-agent read taken from the immutable previous-round
//! snapshot of the dual copies `y`:
//!
//! ```text
//! pᵢ ← pᵢ + α Σ_{j∈𝒩ᵢ} (yᵢ − yⱼ)                                (dual ascent)
//! xᵢ ← argmin fᵢ(x) + (p/2)‖x−zᵢ‖² + ‖Bᵢx − wᵢ‖²/(4ρ|𝒩ᵢ|)      (exact PDC)
//!      or one gradient step of length ζ on the same subproblem  (IPDC)
//! yᵢ ← (Bᵢxᵢ − q/N − pᵢ + ρ Σ_{j∈𝒩ᵢ}(yᵢ+yⱼ)) / (2ρ|𝒩ᵢ|)
//! zᵢ ← zᵢ + β (xᵢ − zᵢ)
//! ```
//!
//! with `wᵢ = q/N + pᵢ − ρ Σ_{j∈𝒩ᵢ}(yᵢ+yⱼ)` evaluated on the snapshot.
//! `pᵢ` tracks `Aᵢᵀμ`, so no agent ever stores the edge multiplier `μ`
//! explicitly; a shadow copy of `μ` is maintained centrally for diagnostics
//! only.
//!
//! Neighbor access goes through an instrumented [`NeighborView`] that counts
//! any read outside the agent's closed neighborhood, which lets tests assert
//! the algorithm is genuinely local. Stages may run agents in parallel; the
//! per-agent arithmetic is identical either way, so serial and parallel runs
//! produce bit-identical traces.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{self, PhiComponents};
use crate::graph::{Graph, GraphMatrices, stack_blocks};
use crate::problem::{CoupledProblem, LocalObjective};

/// Errors from the solver run and its building blocks.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("graph must be connected")]
    Disconnected,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("problem has {problem} agents but graph has {graph}")]
    AgentCountMismatch { problem: usize, graph: usize },
    #[error("non-finite iterate at agent {agent} in round {round}")]
    NonFinite { agent: usize, round: usize },
    #[error("subsolver did not converge within {budget} iterations (last normalized prox gradient {residual:.3e})")]
    SubsolverBudget { budget: usize, residual: f64 },
    #[error("inner-max Hessian is not positive definite (assembly bug): min eigenvalue {0:.3e}")]
    InnerMaxNotPd(f64),
}

/// Which algorithm variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Algorithm 1: the x-subproblem is solved to tolerance with FISTA.
    ExactPdc,
    /// Algorithm 2: one gradient step of length ζ replaces the subproblem.
    InexactIpdc,
}

/// How the dual copies `y⁰` are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YInit {
    /// Uniform on `[−1, 1]`, seeded.
    Uniform,
    /// All zeros (deterministic unit-test setting).
    Zeros,
}

/// Full solver configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Proximal weight `p > 0` (must exceed `−γ⁻` for convex subproblems).
    pub p: f64,
    /// Dual step size `α > 0`.
    pub alpha: f64,
    /// Proximal-center step `β ∈ (0, 1]`.
    pub beta: f64,
    /// Augmented-Lagrangian penalty `ρ > 0`.
    pub rho: f64,
    /// Gradient step `ζ` (required iff mode is inexact).
    pub zeta: Option<f64>,
    /// Normalized proximal-gradient threshold for the FISTA subsolver.
    pub subsolver_tol: f64,
    /// Inner-iteration budget per subsolve.
    pub max_inner: usize,
    pub max_rounds: usize,
    pub seed: u64,
    /// Evaluate the potential function Φ each round (quadratic f only).
    pub record_phi: bool,
    pub y_init: YInit,
    /// Outer stopping thresholds: stop once gradient residue and
    /// infeasibility both fall below these.
    pub tol_residue: f64,
    pub tol_infeasibility: f64,
    /// Number of worker threads for the per-stage fork/join (1 = serial).
    pub threads: usize,
}

impl SolverConfig {
    /// Defaults matching the reference experimental protocol.
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            p: 1.0,
            alpha: 0.01,
            beta: 1.0,
            rho: 0.1,
            zeta: None,
            subsolver_tol: 1e-5,
            max_inner: 10_000,
            max_rounds: 1000,
            seed: 0,
            record_phi: false,
            y_init: YInit::Uniform,
            tol_residue: 0.0,
            tol_infeasibility: 0.0,
            threads: 1,
        }
    }

    fn validate(&self, problem: &CoupledProblem) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::BadConfig(msg.into()));
        if !(self.p > 0.0) {
            return bad("p must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.subsolver_tol > 0.0) {
            return bad("subsolver_tol must be positive");
        }
        match (self.mode, self.zeta) {
            (Mode::InexactIpdc, None) => return bad("zeta is required in inexact mode"),
            (Mode::InexactIpdc, Some(z)) if z <= 0.0 => return bad("zeta must be positive"),
            (Mode::ExactPdc, Some(_)) => return bad("zeta is only meaningful in inexact mode"),
            _ => {}
        }
        if self.record_phi && !problem.is_quadratic() {
            return bad("record_phi requires a quadratic instance");
        }
        Ok(())
    }
}

/// Per-agent mutable algorithm state.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Primal block `xᵢ`.
    pub x: DVector<f64>,
    /// Local dual copy `yᵢ ∈ ℝ^M`.
    pub y: DVector<f64>,
    /// Accumulated `Aᵢᵀμ ∈ ℝ^M`.
    pub p: DVector<f64>,
    /// Proximal center `zᵢ`.
    pub z: DVector<f64>,
    /// Previous-round `yᵢ` (for the snapshot semantics and Φ).
    pub y_prev: DVector<f64>,
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Gradient residue, `(1/Σnᵢ) Σᵢ ‖∇fᵢ(xᵢ) + Bᵢᵀyᵢ‖²`.
    pub grad_residue: f64,
    /// Infeasibility, `(1/M) ‖Σᵢ Bᵢxᵢ − q‖²`.
    pub infeasibility: f64,
    /// Dual consensus gap `‖Ay‖² = Σ_{(i,j)∈E} ‖yᵢ − yⱼ‖²`.
    pub consensus_gap: f64,
    /// Largest per-agent step norms this round.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Total subsolver inner iterations across agents this round.
    pub inner_iters: usize,
    /// Potential function Φ, when recorded.
    pub phi: Option<f64>,
}

/// Full run output: per-round records plus the final agent states and the
/// instrumentation counters.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<RoundRecord>,
    pub final_states: Vec<AgentState>,
    /// Shadow per-edge multiplier consistent with `p_i = (Ãᵀμ ⊗ I_M)_i`;
    /// maintained centrally for diagnostics, never read by agents.
    pub final_mu: Vec<DVector<f64>>,
    /// Non-neighbor reads observed by the locality guard (must stay 0).
    pub locality_violations: u64,
    /// Subsolves that terminated on the normalized prox-gradient rule.
    pub subsolves_stopped_by_tol: u64,
    /// Total subsolves (= rounds × agents in exact mode).
    pub subsolves_total: u64,
    /// Subsolves that exhausted the inner budget.
    pub subsolver_budget_hits: u64,
}

/// The trace CSV header (fixed schema).
pub const TRACE_CSV_HEADER: &str =
    "round,grad_residue,infeasibility,consensus_gap,dx,dy,dz,inner_iters,phi";

impl IterationTrace {
    /// Renders the trace as CSV with full round-trip float precision; the
    /// `phi` field is empty when not recorded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let phi = r.phi.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.grad_residue,
                r.infeasibility,
                r.consensus_gap,
                r.dx,
                r.dy,
                r.dz,
                r.inner_iters,
                phi
            ));
        }
        out
    }

    /// Parses a trace CSV produced by [`Self::to_csv`] back into records.
    pub fn records_from_csv(text: &str) -> Result<Vec<RoundRecord>, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == TRACE_CSV_HEADER => {}
            other => return Err(format!("bad trace header: {other:?}")),
        }
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(format!("bad trace row '{line}'"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{e} in '{line}'"));
            records.push(RoundRecord {
                round: f[0].parse().map_err(|e| format!("{e} in '{line}'"))?,
                grad_residue: num(f[1])?,
                infeasibility: num(f[2])?,
                consensus_gap: num(f[3])?,
                dx: num(f[4])?,
                dy: num(f[5])?,
                dz: num(f[6])?,
                inner_iters: f[7].parse().map_err(|e| format!("{e} in '{line}'"))?,
                phi: if f[8].is_empty() { None } else { Some(num(f[8])?) },
            });
        }
        Ok(records)
    }

    /// Final-state snapshot as labeled flat text, one vector per line:
    /// `agent <i> <field> v v v …`.
    pub fn states_to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.final_states.iter().enumerate() {
            for (name, v) in [("x", &s.x), ("y", &s.y), ("p", &s.p), ("z", &s.z)] {
                out.push_str(&format!("agent {i} {name}"));
                for t in v.iter() {
                    out.push_str(&format!(" {t}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// An instrumented view of the round-`r` snapshot of all dual copies.
///
/// Agent `i`'s update code may read its own block and its neighbors' blocks;
/// any other read is counted as a locality violation (and still returns the
/// value, so the guard observes rather than alters behavior).
pub struct NeighborView<'a> {
    snapshot: &'a [DVector<f64>],
    agent: usize,
    neighbors: &'a [usize],
    violations: &'a AtomicU64,
}

impl<'a> NeighborView<'a> {
    pub fn new(
        snapshot: &'a [DVector<f64>],
        agent: usize,
        neighbors: &'a [usize],
        violations: &'a AtomicU64,
    ) -> Self {
        Self {
            snapshot,
            agent,
            neighbors,
            violations,
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn neighbors(&self) -> &[usize] {
        self.neighbors
    }

    /// The agent's own snapshot block.
    pub fn own(&self) -> &DVector<f64> {
        &self.snapshot[self.agent]
    }

    /// A neighbor's snapshot block; reads outside the closed neighborhood
    /// are recorded as violations.
    pub fn read(&self, j: usize) -> &DVector<f64> {
        if j != self.agent && !self.neighbors.contains(&j) {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
        &self.snapshot[j]
    }
}

/// Dual ascent on the edge multipliers, folded into `pᵢ`:
/// `pᵢ ← pᵢ + α Σ_{j∈𝒩ᵢ} (yᵢ − yⱼ)` (one block of `p + αL⁻y`).
pub fn dual_p_update(view: &NeighborView, p_i: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let yi = view.own();
    let mut acc = DVector::zeros(yi.len());
    for &j in view.neighbors() {
        acc += yi - view.read(j);
    }
    p_i + alpha * acc
}

/// Signless neighbor sum `Σ_{j∈𝒩ᵢ} (yᵢ + yⱼ)`, one block of `L⁺y`.
pub fn signless_neighbor_sum(view: &NeighborView) -> DVector<f64> {
    let yi = view.own();
    let mut acc = DVector::zeros(yi.len());
    for &j in view.neighbors() {
        acc += yi + view.read(j);
    }
    acc
}

/// Immutable per-agent problem context shared by the update operators.
pub struct AgentContext<'a> {
    pub objective: &'a LocalObjective,
    /// Coupling block `Bᵢ`.
    pub b: &'a DMatrix<f64>,
    /// `q/N`.
    pub q_over_n: &'a DVector<f64>,
    /// Degree `|𝒩ᵢ|`.
    pub degree: usize,
    /// `‖Bᵢ‖²` (squared spectral norm), precomputed.
    pub b_norm_sq: f64,
}

impl<'a> AgentContext<'a> {
    /// Subproblem target `wᵢ = q/N + pᵢ − ρ·(signless sum)`; the x- and
    /// y-updates both penalize `Bᵢx − wᵢ`.
    fn target(&self, p_new: &DVector<f64>, signless: &DVector<f64>, rho: f64) -> DVector<f64> {
        self.q_over_n + p_new - rho * signless
    }

    /// Gradient of the x-subproblem
    /// `h(x) = f(x) + (p/2)‖x−z‖² + ‖Bx−w‖²/(4ρ|𝒩ᵢ|)`.
    fn subproblem_grad(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        w: &DVector<f64>,
        p: f64,
        rho: f64,
    ) -> DVector<f64> {
        let scale = 1.0 / (2.0 * rho * self.degree as f64);
        self.objective.gradient(x) + p * (x - z) + scale * (self.b.transpose() * (self.b * x - w))
    }

    fn subproblem_value(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        w: &DVector<f64>,
        p: f64,
        rho: f64,
    ) -> f64 {
        let scale = 1.0 / (4.0 * rho * self.degree as f64);
        self.objective.value(x) + 0.5 * p * (x - z).norm_squared()
            + scale * (self.b * x - w).norm_squared()
    }
}

/// Outcome of one FISTA subsolve.
#[derive(Debug, Clone)]
pub struct SubsolveOutcome {
    pub x: DVector<f64>,
    pub inner_iters: usize,
    /// Whether the normalized prox-gradient rule (rather than the budget)
    /// ended the solve.
    pub stopped_by_tol: bool,
    /// Last observed normalized prox gradient.
    pub residual: f64,
}

/// FISTA on the x-subproblem: constant step `1/L` with
/// `L = γ⁺ + p + ‖Bᵢ‖²/(2ρ|𝒩ᵢ|)`, standard momentum, restart on objective
/// increase, stop when `‖x − (x − ∇h(x)/L)‖ / max(1,‖x‖) ≤ tol`.
fn fista_subsolve(
    ctx: &AgentContext,
    z: &DVector<f64>,
    warm: &DVector<f64>,
    w: &DVector<f64>,
    p: f64,
    rho: f64,
    tol: f64,
    budget: usize,
) -> SubsolveOutcome {
    let lip = ctx.objective.curvature_upper + p + ctx.b_norm_sq / (2.0 * rho * ctx.degree as f64);
    let step = 1.0 / lip;
    let mut x = warm.clone();
    let mut v = x.clone();
    let mut t = 1.0_f64;
    let mut fx = ctx.subproblem_value(&x, z, w, p, rho);
    let mut residual = step * ctx.subproblem_grad(&x, z, w, p, rho).norm() / x.norm().max(1.0);
    if residual <= tol {
        return SubsolveOutcome {
            x,
            inner_iters: 0,
            stopped_by_tol: true,
            residual,
        };
    }
    for k in 1..=budget {
        let g = ctx.subproblem_grad(&v, z, w, p, rho);
        let x_new = &v - step * g;
        let f_new = ctx.subproblem_value(&x_new, z, w, p, rho);
        if f_new > fx {
            // Objective increased: drop momentum and retry from x.
            t = 1.0;
            v = x.clone();
            let g = ctx.subproblem_grad(&v, z, w, p, rho);
            let x_re = &v - step * g;
            let f_re = ctx.subproblem_value(&x_re, z, w, p, rho);
            v = x_re.clone();
            x = x_re;
            fx = f_re;
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            v = &x_new + ((t - 1.0) / t_new) * (&x_new - &x);
            t = t_new;
            x = x_new;
            fx = f_new;
        }
        residual = step * ctx.subproblem_grad(&x, z, w, p, rho).norm() / x.norm().max(1.0);
        if residual <= tol {
            return SubsolveOutcome {
                x,
                inner_iters: k,
                stopped_by_tol: true,
                residual,
            };
        }
    }
    SubsolveOutcome {
        x,
        inner_iters: budget,
        stopped_by_tol: false,
        residual,
    }
}

/// Exact x-update (Algorithm 1): minimizes the strongly convex subproblem
/// with FISTA. Errors if the inner budget is exhausted before the stopping
/// rule fires.
pub fn x_update_exact(
    ctx: &AgentContext,
    config: &SolverConfig,
    z: &DVector<f64>,
    x_warm: &DVector<f64>,
    p_new: &DVector<f64>,
    signless: &DVector<f64>,
) -> Result<SubsolveOutcome, EngineError> {
    debug_assert!(
        config.p > -ctx.objective.curvature_lower,
        "subproblem may be non-convex: p <= -gamma_minus"
    );
    let w = ctx.target(p_new, signless, config.rho);
    let out = fista_subsolve(
        ctx,
        z,
        x_warm,
        &w,
        config.p,
        config.rho,
        config.subsolver_tol,
        config.max_inner,
    );
    if out.stopped_by_tol {
        Ok(out)
    } else {
        Err(EngineError::SubsolverBudget {
            budget: config.max_inner,
            residual: out.residual,
        })
    }
}

/// Inexact x-update (Algorithm 2): one gradient step of length ζ on the same
/// subproblem, evaluated at the current iterate.
pub fn x_update_inexact(
    ctx: &AgentContext,
    config: &SolverConfig,
    z: &DVector<f64>,
    x_current: &DVector<f64>,
    p_new: &DVector<f64>,
    signless: &DVector<f64>,
) -> DVector<f64> {
    let zeta = config.zeta.expect("zeta required in inexact mode");
    let w = ctx.target(p_new, signless, config.rho);
    x_current - zeta * ctx.subproblem_grad(x_current, z, &w, config.p, config.rho)
}

/// Closed-form y-update:
/// `yᵢ = (Bᵢ xᵢ − q/N − pᵢ + ρ·signless) / (2ρ|𝒩ᵢ|)`.
pub fn y_update(
    ctx: &AgentContext,
    x_new: &DVector<f64>,
    p_new: &DVector<f64>,
    signless: &DVector<f64>,
    rho: f64,
) -> DVector<f64> {
    assert!(ctx.degree >= 1, "y-update requires at least one neighbor");
    (ctx.b * x_new - ctx.q_over_n - p_new + rho * signless) / (2.0 * rho * ctx.degree as f64)
}

/// Proximal-center relaxation `zᵢ ← zᵢ + β(xᵢ − zᵢ)`.
pub fn z_update(z: &DVector<f64>, x_new: &DVector<f64>, beta: f64) -> DVector<f64> {
    z + beta * (x_new - z)
}

/// Dense oracle for the inner maximization the y-update solves in closed
/// form: with `x` fixed, maximize over the stacked `y ∈ ℝ^{NM}`
///
/// ```text
/// Σᵢ yᵢᵀ(Bᵢxᵢ − q/N − pᵢ)  −  (ρ/2)‖Ay‖²  −  (ρ/2)‖y − yʳ‖²_{L⁺}
/// ```
///
/// whose Hessian is `−ρ(L⁻ + L⁺) = −2ρD` (strictly negative definite on a
/// connected graph). The stationarity system is assembled with the expanded
/// Kronecker matrices and LU-solved — deliberately independent of the
/// per-agent closed form it verifies.
pub fn brute_force_inner_max(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    x_fixed: &[DVector<f64>],
    p_blocks: &[DVector<f64>],
    y_snapshot: &[DVector<f64>],
    rho: f64,
) -> Result<DVector<f64>, EngineError> {
    let m = problem.m_constraints();
    let n = problem.n_agents();
    assert_eq!(matrices.block_size(), m, "matrices expanded with wrong block size");
    let l_minus = matrices.signed_laplacian_expanded();
    let l_plus = matrices.signless_laplacian_expanded();
    let hessian = rho * (&l_minus + &l_plus);
    let min_eig = nalgebra::SymmetricEigen::new(hessian.clone())
        .eigenvalues
        .min();
    if min_eig <= 0.0 {
        return Err(EngineError::InnerMaxNotPd(-min_eig));
    }
    let q_over_n = problem.rhs.clone() / n as f64;
    let b: DVector<f64> = stack_blocks(
        &(0..n)
            .map(|i| &problem.coupling[i] * &x_fixed[i] - &q_over_n - &p_blocks[i])
            .collect::<Vec<_>>(),
    );
    let rhs = b + rho * (&l_plus * stack_blocks(y_snapshot));
    hessian
        .lu()
        .solve(&rhs)
        .ok_or(EngineError::InnerMaxNotPd(0.0))
}

/// Maps over agents serially or in parallel; the per-agent computation is
/// identical, so results are bit-identical either way.
fn for_agents<T: Send>(
    parallel: bool,
    n: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Runs Algorithm 1 (exact) or Algorithm 2 (inexact) for up to
/// `config.max_rounds` synchronous rounds.
///
/// Initialization: `x⁰ = z⁰` seeded uniform on `[−1,1]`, `y⁰` per
/// `config.y_init`, `p⁰ = 0`. Stops early when gradient residue and
/// infeasibility both fall below the configured thresholds. Any non-finite
/// iterate aborts with the offending agent and round.
pub fn run(
    problem: &CoupledProblem,
    graph: &Graph,
    config: &SolverConfig,
) -> Result<IterationTrace, EngineError> {
    config.validate(problem)?;
    if !graph.is_connected() {
        return Err(EngineError::Disconnected);
    }
    let n = problem.n_agents();
    if n != graph.n_agents() {
        return Err(EngineError::AgentCountMismatch {
            problem: n,
            graph: graph.n_agents(),
        });
    }
    assert!((0..n).all(|i| graph.degree(i) >= 1));
    let m = problem.m_constraints();
    let parallel = config.threads > 1;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut uniform = |len: usize| DVector::from_fn(len, |_, _| rng.gen_range(-1.0..=1.0));
    let mut states: Vec<AgentState> = Vec::with_capacity(n);
    for obj in &problem.objectives {
        let x = uniform(obj.dim);
        states.push(AgentState {
            z: x.clone(),
            x,
            y: DVector::zeros(m),
            p: DVector::zeros(m),
            y_prev: DVector::zeros(m),
        });
    }
    if matches!(config.y_init, YInit::Uniform) {
        for s in &mut states {
            s.y = uniform(m);
            s.y_prev = s.y.clone();
        }
    }

    let q_over_n = problem.rhs.clone() / n as f64;
    let b_norm_sq: Vec<f64> = problem
        .coupling
        .iter()
        .map(|b| {
            let s = b.clone().svd(false, false).singular_values[0];
            s * s
        })
        .collect();
    let ctx = |i: usize| AgentContext {
        objective: &problem.objectives[i],
        b: &problem.coupling[i],
        q_over_n: &q_over_n,
        degree: graph.degree(i),
        b_norm_sq: b_norm_sq[i],
    };

    // Shadow edge multiplier mu (diagnostics only; agents never read it).
    let mut mu: Vec<DVector<f64>> = vec![DVector::zeros(m); graph.n_edges()];
    let phi_matrices = if config.record_phi {
        Some(GraphMatrices::derive(graph, m))
    } else {
        None
    };

    let violations = AtomicU64::new(0);
    let mut records = Vec::with_capacity(config.max_rounds);
    let mut stopped_by_tol = 0u64;
    let mut budget_hits = 0u64;
    let mut total_solves = 0u64;

    for round in 1..=config.max_rounds {
        // Immutable snapshot of the round-r dual copies.
        let snapshot: Vec<DVector<f64>> = states.iter().map(|s| s.y.clone()).collect();
        let view = |i: usize| NeighborView::new(&snapshot, i, graph.neighbors(i), &violations);

        // Stage 1: dual ascent into p, plus the signless sums both later
        // stages consume (all reads hit the same snapshot).
        let stage1: Vec<(DVector<f64>, DVector<f64>)> = for_agents(parallel, n, |i| {
            let v = view(i);
            (
                dual_p_update(&v, &states[i].p, config.alpha),
                signless_neighbor_sum(&v),
            )
        });

        // Stage 2: primal update.
        let stage2: Vec<Result<(DVector<f64>, usize, bool, bool), EngineError>> =
            for_agents(parallel, n, |i| {
                let (p_new, signless) = &stage1[i];
                match config.mode {
                    Mode::ExactPdc => {
                        let c = ctx(i);
                        let w = c.target(p_new, signless, config.rho);
                        let out = fista_subsolve(
                            &c,
                            &states[i].z,
                            &states[i].x,
                            &w,
                            config.p,
                            config.rho,
                            config.subsolver_tol,
                            config.max_inner,
                        );
                        Ok((out.x, out.inner_iters, out.stopped_by_tol, true))
                    }
                    Mode::InexactIpdc => {
                        let c = ctx(i);
                        let x = x_update_inexact(
                            &c,
                            config,
                            &states[i].z,
                            &states[i].x,
                            p_new,
                            signless,
                        );
                        Ok((x, 1, false, false))
                    }
                }
            });

        let mut x_new = Vec::with_capacity(n);
        let mut inner_total = 0usize;
        for r in stage2 {
            let (x, iters, by_tol, counted) = r?;
            inner_total += iters;
            if counted {
                total_solves += 1;
                if by_tol {
                    stopped_by_tol += 1;
                } else {
                    budget_hits += 1;
                }
            }
            x_new.push(x);
        }

        // Stage 3: closed-form dual copies.
        let y_new: Vec<DVector<f64>> = for_agents(parallel, n, |i| {
            let (p_new, signless) = &stage1[i];
            y_update(&ctx(i), &x_new[i], p_new, signless, config.rho)
        });

        // Stage 4: proximal centers.
        let z_new: Vec<DVector<f64>> = for_agents(parallel, n, |i| {
            z_update(&states[i].z, &x_new[i], config.beta)
        });

        // Shadow multiplier: mu_e += alpha (y_i - y_j) on the snapshot.
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            mu[e] += config.alpha * (&snapshot[i] - &snapshot[j]);
        }

        let mut dx = 0.0f64;
        let mut dy = 0.0f64;
        let mut dz = 0.0f64;
        for i in 0..n {
            dx = dx.max((&x_new[i] - &states[i].x).norm());
            dy = dy.max((&y_new[i] - &states[i].y).norm());
            dz = dz.max((&z_new[i] - &states[i].z).norm());
            states[i].y_prev = std::mem::replace(&mut states[i].y, y_new[i].clone());
            states[i].x = x_new[i].clone();
            states[i].z = z_new[i].clone();
            states[i].p = stage1[i].0.clone();
        }

        for (i, s) in states.iter().enumerate() {
            let finite = s.x.iter().all(|v| v.is_finite())
                && s.y.iter().all(|v| v.is_finite())
                && s.p.iter().all(|v| v.is_finite())
                && s.z.iter().all(|v| v.is_finite());
            if !finite {
                return Err(EngineError::NonFinite { agent: i, round });
            }
        }

        let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
        let ys: Vec<DVector<f64>> = states.iter().map(|s| s.y.clone()).collect();
        let grad_residue = diagnostics::gradient_residue(problem, &xs, &ys);
        let infeasibility = diagnostics::infeasibility(problem, &xs);
        let consensus_gap: f64 = graph
            .edges()
            .iter()
            .map(|&(i, j)| (&states[i].y - &states[j].y).norm_squared())
            .sum();

        let phi = phi_matrices.as_ref().map(|mats| {
            let zs: Vec<DVector<f64>> = states.iter().map(|s| s.z.clone()).collect();
            let y_prevs: Vec<DVector<f64>> = states.iter().map(|s| s.y_prev.clone()).collect();
            let comp: PhiComponents = diagnostics::phi_eval_quadratic(
                problem,
                mats,
                &xs,
                &ys,
                &y_prevs,
                &zs,
                &stack_blocks(&mu),
                config.rho,
                config.p,
                config.alpha,
            );
            comp.phi
        });

        records.push(RoundRecord {
            round,
            grad_residue,
            infeasibility,
            consensus_gap,
            dx,
            dy,
            dz,
            inner_iters: inner_total,
            phi,
        });

        if grad_residue <= config.tol_residue && infeasibility <= config.tol_infeasibility {
            break;
        }
    }

    Ok(IterationTrace {
        records,
        final_states: states,
        final_mu: mu,
        locality_violations: violations.load(Ordering::Relaxed),
        subsolves_stopped_by_tol: stopped_by_tol,
        subsolves_total: total_solves,
        subsolver_budget_hits: budget_hits,
    })
}
