//! Convergence metrics and analysis-side oracles.
//!
//! Two families live here:
//!
//! - **Run metrics**: the normalized gradient residue
//!   `(1/Σnᵢ) Σᵢ ‖∇fᵢ(xᵢ) + Bᵢᵀyᵢ‖²` and infeasibility
//!   `(1/M) ‖Σᵢ Bᵢxᵢ − q‖²`, plus the ε-KKT certificate that searches the
//!   best dual witness by least squares.
//! - **Theory oracles**: the proximal solution map `x(z)` (the strongly
//!   convex coupled subproblem at a frozen proximal center), and the
//!   potential function `Φ = G̃ − 2𝓛_ρ + 2d` whose monotone descent
//!   certifies that a run sits inside the proven parameter regime. Φ is
//!   evaluated only on quadratic instances, where every inner
//!   minimization/maximization has a dense closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::graph::{stack_blocks, GraphMatrices};
use crate::problem::CoupledProblem;

/// Relative cutoff for treating eigen/singular values as zero in the
/// minimum-norm solves.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("proximal subproblem requires p > -gamma_minus (p = {p}, gamma_minus = {gamma_minus})")]
    NotStronglyConvex { p: f64, gamma_minus: f64 },
    #[error("proximal KKT system is numerically singular")]
    SingularProxSystem,
    #[error("augmented-Lagrangian path did not converge: residual {0:.3e}")]
    ProxNoConvergence(f64),
}

/// ε-KKT certificate of a primal point.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Normalized gradient residue (metric form).
    pub residue: f64,
    /// Normalized infeasibility (metric form).
    pub infeasibility: f64,
    /// Least-squares dual witness minimizing the stationarity residual.
    pub best_dual: DVector<f64>,
    /// Unnormalized stationarity `Σᵢ ‖∇fᵢ(xᵢ) + Bᵢᵀy‖²` at the witness.
    pub stationarity_sq: f64,
    /// Unnormalized constraint violation `‖Σᵢ Bᵢxᵢ − q‖²`.
    pub infeasibility_sq: f64,
    /// `ε = max(stationarity_sq, infeasibility_sq)` (the definition's raw
    /// quantities, not the normalized metrics).
    pub epsilon: f64,
}

/// Components of the potential function at one visited state.
#[derive(Debug, Clone, Copy)]
pub struct PhiComponents {
    /// `G(x, y, μ; z)`.
    pub g_value: f64,
    /// `G̃ = G + (α/2)‖y‖²_{L⁻} + (ρ/2)‖y − y_prev‖²_{L⁺}`.
    pub g_tilde: f64,
    /// `𝓛_ρ(y, μ; z)`.
    pub l_rho: f64,
    /// `d(μ; z) = max_y 𝓛_ρ(y, μ; z)` (value at the min-norm maximizer).
    pub dual_d: f64,
    /// `Φ = G̃ − 2𝓛_ρ + 2d`.
    pub phi: f64,
}

/// Normalized gradient residue `(1/Σnᵢ) Σᵢ ‖∇fᵢ(xᵢ) + Bᵢᵀyᵢ‖²`.
pub fn gradient_residue(
    problem: &CoupledProblem,
    x: &[DVector<f64>],
    y: &[DVector<f64>],
) -> f64 {
    let total: f64 = problem
        .objectives
        .iter()
        .zip(problem.coupling.iter())
        .zip(x.iter().zip(y))
        .map(|((obj, b), (xi, yi))| (obj.gradient(xi) + b.transpose() * yi).norm_squared())
        .sum();
    total / problem.total_dim() as f64
}

/// Normalized infeasibility `(1/M) ‖Σᵢ Bᵢxᵢ − q‖²`.
pub fn infeasibility(problem: &CoupledProblem, x: &[DVector<f64>]) -> f64 {
    problem.constraint_residual(x).norm_squared() / problem.m_constraints() as f64
}

/// Minimum-norm solve of the symmetric PSD system `H y = r` by
/// eigendecomposition, dropping the (near-)null directions.
fn min_norm_solve_sym(h: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cutoff = RANK_TOL * max_ev.max(1e-300);
    let coeffs = eig.eigenvectors.transpose() * r;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&c, &ev)| if ev.abs() > cutoff { c / ev } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

/// Builds the ε-KKT certificate: the least-squares dual witness
/// `y* = argmin_y Σᵢ ‖∇fᵢ(xᵢ) + Bᵢᵀy‖²` (minimum-norm when `Σ BᵢBᵢᵀ` is
/// singular), with both raw definition quantities and the normalized metrics.
pub fn eps_kkt(problem: &CoupledProblem, x: &[DVector<f64>]) -> KktReport {
    let m = problem.m_constraints();
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (b, (obj, xi)) in problem
        .coupling
        .iter()
        .zip(problem.objectives.iter().zip(x))
    {
        gram += b * b.transpose();
        rhs -= b * obj.gradient(xi);
    }
    let best_dual = min_norm_solve_sym(&gram, &rhs);
    let stationarity_sq: f64 = problem
        .objectives
        .iter()
        .zip(problem.coupling.iter())
        .zip(x)
        .map(|((obj, b), xi)| (obj.gradient(xi) + b.transpose() * &best_dual).norm_squared())
        .sum();
    let infeasibility_sq = problem.constraint_residual(x).norm_squared();
    KktReport {
        residue: stationarity_sq / problem.total_dim() as f64,
        infeasibility: infeasibility_sq / m as f64,
        best_dual,
        stationarity_sq,
        infeasibility_sq,
        epsilon: stationarity_sq.max(infeasibility_sq),
    }
}

/// Solves the proximal counterpart of the coupled problem at a frozen
/// center `z`:
///
/// ```text
/// min_x Σᵢ fᵢ(xᵢ) + (p/2)‖xᵢ − zᵢ‖²   s.t.  Σᵢ Bᵢxᵢ = q,
/// ```
///
/// returning the primal blocks `x(z)` and the multiplier `y₀(z)`. Quadratic
/// instances go through one dense KKT solve; general instances through
/// centralized augmented-Lagrangian iterations to a `1e−10` KKT residual.
pub fn prox_solution_map(
    problem: &CoupledProblem,
    z: &[DVector<f64>],
    p: f64,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), DiagnosticsError> {
    let gamma_minus = problem.gamma_minus();
    if p <= -gamma_minus {
        return Err(DiagnosticsError::NotStronglyConvex { p, gamma_minus });
    }
    if problem.is_quadratic() {
        prox_map_quadratic(problem, z, p)
    } else {
        prox_map_general(problem, z, p)
    }
}

fn prox_map_quadratic(
    problem: &CoupledProblem,
    z: &[DVector<f64>],
    p: f64,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), DiagnosticsError> {
    let n_total = problem.total_dim();
    let m = problem.m_constraints();
    let dim = n_total + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let mut at = 0;
    for (i, obj) in problem.objectives.iter().enumerate() {
        let (q_mat, c) = obj.quadratic_data().expect("quadratic path");
        let shifted = q_mat + DMatrix::identity(obj.dim, obj.dim) * p;
        kkt.view_mut((at, at), (obj.dim, obj.dim)).copy_from(&shifted);
        let b = &problem.coupling[i];
        kkt.view_mut((at, n_total), (obj.dim, m))
            .copy_from(&b.transpose());
        kkt.view_mut((n_total, at), (m, obj.dim)).copy_from(b);
        rhs.rows_mut(at, obj.dim).copy_from(&(p * &z[i] - c));
        at += obj.dim;
    }
    rhs.rows_mut(n_total, m).copy_from(&problem.rhs);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(DiagnosticsError::SingularProxSystem)?;
    let mut x = Vec::with_capacity(problem.n_agents());
    let mut at = 0;
    for obj in &problem.objectives {
        x.push(sol.rows(at, obj.dim).into_owned());
        at += obj.dim;
    }
    Ok((x, sol.rows(n_total, m).into_owned()))
}

/// Centralized method of multipliers for the general-objective path:
/// Nesterov-accelerated inner solves of the strongly convex augmented
/// Lagrangian, with a doubling penalty when feasibility stalls.
fn prox_map_general(
    problem: &CoupledProblem,
    z: &[DVector<f64>],
    p: f64,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), DiagnosticsError> {
    const TARGET: f64 = 1e-10;
    let n = problem.n_agents();
    let m = problem.m_constraints();
    let dims: Vec<usize> = problem.objectives.iter().map(|o| o.dim).collect();
    let split = |v: &DVector<f64>| -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut at = 0;
        for &d in &dims {
            out.push(v.rows(at, d).into_owned());
            at += d;
        }
        out
    };
    let b_full = problem.coupling_assembled();
    let b_norm = b_full.clone().svd(false, false).singular_values[0];
    let z_stacked = stack_blocks(z);
    let mu_strong = p + problem.gamma_minus();

    let grad_f = |x: &DVector<f64>| -> DVector<f64> {
        let blocks = split(x);
        let mut g = DVector::zeros(x.len());
        let mut at = 0;
        for (obj, xb) in problem.objectives.iter().zip(&blocks) {
            g.rows_mut(at, obj.dim).copy_from(&obj.gradient(xb));
            at += obj.dim;
        }
        g + p * (x - &z_stacked)
    };

    let mut x = z_stacked.clone();
    let mut y = DVector::zeros(m);
    let mut penalty = 1.0_f64;
    let mut last_feas = f64::INFINITY;
    for _outer in 0..200 {
        // Inner: minimize F(x) + y'(Bx−q) + (penalty/2)||Bx−q||².
        let lip = problem.gamma_plus() + p + penalty * b_norm * b_norm;
        let momentum = {
            let (sl, sm) = (lip.sqrt(), mu_strong.sqrt());
            (sl - sm) / (sl + sm)
        };
        let step = 1.0 / lip;
        let mut v = x.clone();
        for _ in 0..100_000 {
            let r = &b_full * &v - &problem.rhs;
            let g = grad_f(&v) + b_full.transpose() * (&y + penalty * r);
            let x_new = &v - step * &g;
            let moved = &x_new - &x;
            v = &x_new + momentum * &moved;
            x = x_new;
            if g.norm() <= 0.05 * TARGET {
                break;
            }
        }
        let feas = (&b_full * &x - &problem.rhs).norm();
        y += penalty * (&b_full * &x - &problem.rhs);
        let stat = {
            let blocks = split(&x);
            problem
                .objectives
                .iter()
                .zip(problem.coupling.iter())
                .zip(&blocks)
                .zip(z)
                .map(|(((obj, b), xb), zb)| {
                    (obj.gradient(xb) + p * (xb - zb) + b.transpose() * &y).norm()
                })
                .fold(0.0_f64, f64::max)
        };
        if feas <= TARGET && stat <= TARGET {
            return Ok((split(&x), y));
        }
        if feas > 0.25 * last_feas {
            penalty *= 2.0;
        }
        last_feas = feas;
    }
    let feas = (&b_full * &x - &problem.rhs).norm();
    Err(DiagnosticsError::ProxNoConvergence(feas))
}

/// Per-agent dual function pieces for quadratic objectives: the minimizer
/// `x̂ᵢ(yᵢ, zᵢ)` and value of `min_x fᵢ(x) + (p/2)‖x−zᵢ‖² + yᵢᵀBᵢx`.
struct QuadDualPieces {
    /// `(Qᵢ + pI)⁻¹`.
    inv: Vec<DMatrix<f64>>,
}

impl QuadDualPieces {
    fn new(problem: &CoupledProblem, p: f64) -> Self {
        let inv = problem
            .objectives
            .iter()
            .map(|obj| {
                let (q_mat, _) = obj.quadratic_data().expect("quadratic instance required");
                (q_mat + DMatrix::identity(obj.dim, obj.dim) * p)
                    .try_inverse()
                    .expect("Q + pI invertible for p > -gamma_minus")
            })
            .collect();
        Self { inv }
    }

    fn phi_i(
        &self,
        problem: &CoupledProblem,
        i: usize,
        y_i: &DVector<f64>,
        z_i: &DVector<f64>,
        p: f64,
    ) -> f64 {
        let obj = &problem.objectives[i];
        let (_, c) = obj.quadratic_data().unwrap();
        let b = &problem.coupling[i];
        let x_hat = &self.inv[i] * (p * z_i - c - b.transpose() * y_i);
        obj.value(&x_hat) + 0.5 * p * (&x_hat - z_i).norm_squared() + y_i.dot(&(b * &x_hat))
    }
}

/// `Aᵀμ` split into per-agent blocks: agent `i` accumulates `+μ_e` for edges
/// where it is the smaller endpoint and `−μ_e` where it is the larger.
fn incidence_transpose_mu(
    matrices: &GraphMatrices,
    mu: &DVector<f64>,
    m: usize,
) -> Vec<DVector<f64>> {
    let graph = matrices.graph();
    let mut out = vec![DVector::zeros(m); graph.n_agents()];
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let mu_e = mu.rows(e * m, m);
        out[i] += &mu_e;
        out[j] -= &mu_e;
    }
    out
}

/// `Ay` per edge: `(Ay)_e = yᵢ − yⱼ` for edge `e = (i, j)`.
fn incidence_apply(matrices: &GraphMatrices, y: &[DVector<f64>]) -> DVector<f64> {
    let graph = matrices.graph();
    let m = y[0].len();
    let mut out = DVector::zeros(graph.n_edges() * m);
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        out.rows_mut(e * m, m).copy_from(&(&y[i] - &y[j]));
    }
    out
}

/// The augmented Lagrangian `𝓛_ρ(y, μ; z)` on a quadratic instance.
fn l_rho_quadratic(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    pieces: &QuadDualPieces,
    y: &[DVector<f64>],
    z: &[DVector<f64>],
    mu: &DVector<f64>,
    rho: f64,
    p: f64,
) -> f64 {
    let n = problem.n_agents();
    let q_over_n = problem.rhs.clone() / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        total += pieces.phi_i(problem, i, &y[i], &z[i], p) - y[i].dot(&q_over_n);
    }
    let ay = incidence_apply(matrices, y);
    total - mu.dot(&ay) - 0.5 * rho * ay.norm_squared()
}

/// The dual value `d(μ; z) = max_y 𝓛_ρ(y, μ; z)` on a quadratic instance,
/// via the min-norm maximizer of the concave quadratic (the value is unique
/// even when the maximizer is not). Returns `(d, y*)`.
pub fn dual_max_quadratic(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    z: &[DVector<f64>],
    mu: &DVector<f64>,
    rho: f64,
    p: f64,
) -> (f64, DVector<f64>) {
    let pieces = QuadDualPieces::new(problem, p);
    let (h, r) = dual_stationarity_system(problem, matrices, &pieces, z, mu, rho, p);
    let y_star = min_norm_solve_sym(&h, &r);
    let m = problem.m_constraints();
    let blocks = crate::graph::split_blocks(&y_star, problem.n_agents(), m);
    let d = l_rho_quadratic(problem, matrices, &pieces, &blocks, z, mu, rho, p);
    (d, y_star)
}

/// Assembles the stationarity system `H y = r` of `∇_y 𝓛_ρ = 0`:
/// `H = blockdiag(Bᵢ(Qᵢ+pI)⁻¹Bᵢᵀ) + ρL⁻`, `rᵢ = BᵢSᵢ(pzᵢ−cᵢ) − q/N − (Aᵀμ)ᵢ`.
fn dual_stationarity_system(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    pieces: &QuadDualPieces,
    z: &[DVector<f64>],
    mu: &DVector<f64>,
    rho: f64,
    p: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = problem.n_agents();
    let m = problem.m_constraints();
    let mut h = rho * matrices.signed_laplacian_expanded();
    let mut r = DVector::zeros(n * m);
    let q_over_n = problem.rhs.clone() / n as f64;
    let at_mu = incidence_transpose_mu(matrices, mu, m);
    for i in 0..n {
        let b = &problem.coupling[i];
        let (_, c) = problem.objectives[i].quadratic_data().unwrap();
        let h_i = b * &pieces.inv[i] * b.transpose();
        for a in 0..m {
            for bcol in 0..m {
                h[(i * m + a, i * m + bcol)] += h_i[(a, bcol)];
            }
        }
        let r_i = b * (&pieces.inv[i] * (p * &z[i] - c)) - &q_over_n - &at_mu[i];
        r.rows_mut(i * m, m).copy_from(&r_i);
    }
    (h, r)
}

/// Projects stacked dual copies `y` onto the solution set `𝒴(μ, z)` of the
/// inner maximization (an affine set, since `𝓛_ρ` is a concave quadratic in
/// `y`): `proj(y) = y − H⁺(Hy − r)` with `H` symmetric PSD.
pub fn dual_solution_set_projection(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    z: &[DVector<f64>],
    mu: &DVector<f64>,
    rho: f64,
    p: f64,
    y: &DVector<f64>,
) -> DVector<f64> {
    let pieces = QuadDualPieces::new(problem, p);
    let (h, r) = dual_stationarity_system(problem, matrices, &pieces, z, mu, rho, p);
    let defect = &h * y - r;
    y - min_norm_solve_sym(&h, &defect)
}

/// Evaluates all potential-function components at one visited state of a
/// quadratic instance.
///
/// `matrices` must be expanded with block size `M`; `mu` is the stacked
/// shadow edge multiplier (`|E|·M`); `y_prev` is the previous round's dual
/// snapshot entering the `(ρ/2)‖y − y_prev‖²_{L⁺}` term. The `G̃` weights
/// follow the descent analysis (`(α/2)‖y‖²_{L⁻}`), which is why `alpha`
/// appears alongside `rho` and `p`.
#[allow(clippy::too_many_arguments)]
pub fn phi_eval_quadratic(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    x: &[DVector<f64>],
    y: &[DVector<f64>],
    y_prev: &[DVector<f64>],
    z: &[DVector<f64>],
    mu: &DVector<f64>,
    rho: f64,
    p: f64,
    alpha: f64,
) -> PhiComponents {
    assert!(problem.is_quadratic(), "phi is defined on quadratic instances only");
    let n = problem.n_agents();
    let q_over_n = problem.rhs.clone() / n as f64;

    // G = sum_i (f_i + p/2 ||x-z||^2 + y'Bx - y'q/N) - mu'Ay - rho/2 ||Ay||^2.
    let mut g_value = 0.0;
    for i in 0..n {
        let obj = &problem.objectives[i];
        let b = &problem.coupling[i];
        g_value += obj.value(&x[i])
            + 0.5 * p * (&x[i] - &z[i]).norm_squared()
            + y[i].dot(&(b * &x[i]))
            - y[i].dot(&q_over_n);
    }
    let ay = incidence_apply(matrices, y);
    g_value -= mu.dot(&ay) + 0.5 * rho * ay.norm_squared();

    // ||y||^2_{L-} = sum_e ||y_i - y_j||^2; ||v||^2_{L+} = sum_e ||v_i + v_j||^2.
    let graph = matrices.graph();
    let mut y_lminus = 0.0;
    let mut dy_lplus = 0.0;
    for &(i, j) in graph.edges() {
        y_lminus += (&y[i] - &y[j]).norm_squared();
        let di = &y[i] - &y_prev[i];
        let dj = &y[j] - &y_prev[j];
        dy_lplus += (di + dj).norm_squared();
    }
    let g_tilde = g_value + 0.5 * alpha * y_lminus + 0.5 * rho * dy_lplus;

    let pieces = QuadDualPieces::new(problem, p);
    let l_rho = l_rho_quadratic(problem, matrices, &pieces, y, z, mu, rho, p);
    let (dual_d, _) = dual_max_quadratic(problem, matrices, z, mu, rho, p);

    PhiComponents {
        g_value,
        g_tilde,
        l_rho,
        dual_d,
        phi: g_tilde - 2.0 * l_rho + 2.0 * dual_d,
    }
}
