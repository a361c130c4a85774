//! Closed-form constants of the convergence theory.
//!
//! Everything the analysis defines in terms of the problem data is computed
//! here so experiments can be run inside (or deliberately outside) the
//! proven parameter regime:
//!
//! - perturbation constants `σ₁ = p(p+γ⁺+1)/(p+γ⁻)`, `σ₂ = B_max(p+γ⁺+1)/(p+γ⁻)`,
//!   `σ₃ = p/(p+γ⁻)`, `σ₄(ζ) = 1 + 3/(ζ(p+γ⁻))`;
//! - Hoffman-type error-bound constants `θ₁ = θ₂` and `θ₃`, either estimated
//!   directly as `σ_max(M̄)/σ_min²(M̄)` on the structured matrices `M₁ = [L⁻; B_diagᵀ]`
//!   and `M₂ = [[Aᵀ, L⁻], [0, A], [0, B_diagᵀ]]`, or bounded in closed form
//!   through the graph spectrum when `B = [B₁, …, B_N]` has full row rank;
//! - the error constants `a₁, …, a₆` and the KKT translation factor
//!   `κ = max{2(p² + (γ⁺)²), N·B_max²}`;
//! - admissible step sizes: the exact-subproblem caps on `α` and `β`, and the
//!   inexact variant's joint conditions on `(p, ζ, α)`;
//! - the descent constants `C₁…C₄` (informational — the assertable claim is
//!   monotone descent of the potential, tested elsewhere).
//!
//! All functions are pure; `ConstantSheet` bundles the full picture for one
//! (instance, graph, solver-config) triple and serializes to JSON.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::engine::{Mode, SolverConfig};
use crate::graph::{spectral_summary, GraphMatrices};
use crate::problem::CoupledProblem;

/// Relative tolerance for rank decisions in the row-selection and
/// full-row-rank checks.
const RANK_TOL: f64 = 1e-10;

/// Above this many columns of `M₁`, the direct Hoffman estimate (a dense
/// SVD of the stacked system) is skipped in `constant_sheet` and the
/// closed-form spectral bounds are used instead.
const DIRECT_THETA_DIM_CAP: usize = 1500;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("constants require p > -gamma_minus (p = {p}, gamma_minus = {gamma_minus})")]
    CurvatureTooWeak { p: f64, gamma_minus: f64 },
    #[error("Hoffman estimate of a zero matrix is undefined")]
    ZeroMatrix,
    #[error("assembled coupling matrix is not full row rank; spectral theta bounds do not apply")]
    RankDeficientCoupling,
    #[error("admissible zeta interval is empty: ({lower:.6e}, {upper:.6e}); increase p")]
    EmptyZetaInterval { lower: f64, upper: f64 },
    #[error("inexact step size zeta is required for this computation")]
    MissingZeta,
    #[error("block size of the graph matrices must equal the constraint dimension")]
    BlockSizeMismatch,
}

/// Lipschitz-style perturbation constants of the proximal solution map.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbationConstants {
    /// `σ₁ = p(p+γ⁺+1)/(p+γ⁻)`.
    pub sigma1: f64,
    /// `σ₂ = B_max(p+γ⁺+1)/(p+γ⁻)`.
    pub sigma2: f64,
    /// `σ₃ = p/(p+γ⁻)`: the z-contraction factor of the prox map.
    pub sigma3: f64,
    /// `p + γ⁻`, kept so `σ₄(ζ)` can be evaluated for any ζ.
    p_plus_gamma_minus: f64,
}

impl PerturbationConstants {
    /// `σ₄(ζ) = 1 + 3/(ζ(p+γ⁻))`, the inexact-update inflation factor.
    pub fn sigma4(&self, zeta: f64) -> f64 {
        1.0 + 3.0 / (zeta * self.p_plus_gamma_minus)
    }
}

/// Computes `σ₁, σ₂, σ₃` (and the data for `σ₄`) from the curvature and
/// coupling magnitudes. Requires `p > −γ⁻`.
pub fn perturbation_constants(
    p: f64,
    gamma_minus: f64,
    gamma_plus: f64,
    b_max: f64,
) -> Result<PerturbationConstants, BoundsError> {
    if p + gamma_minus <= 0.0 {
        return Err(BoundsError::CurvatureTooWeak { p, gamma_minus });
    }
    let denom = p + gamma_minus;
    let numer = p + gamma_plus + 1.0;
    Ok(PerturbationConstants {
        sigma1: p * numer / denom,
        sigma2: b_max * numer / denom,
        sigma3: p / denom,
        p_plus_gamma_minus: denom,
    })
}

/// Hoffman-type constant `θ = σ_max(M̄)/σ_min²(M̄)` where `M̄` is a maximal
/// row-independent submatrix of `m`, selected by pivoted Gram–Schmidt over
/// the rows with tolerance `1e−10·σ_max(m)`.
pub fn hoffman_theta(m: &DMatrix<f64>) -> Result<f64, BoundsError> {
    let sig_max = m.clone().svd(false, false).singular_values[0];
    if sig_max == 0.0 {
        return Err(BoundsError::ZeroMatrix);
    }
    let tol = RANK_TOL * sig_max;
    let nrows = m.nrows();
    let mut residual: Vec<DVector<f64>> =
        (0..nrows).map(|i| m.row(i).transpose()).collect();
    let mut taken = vec![false; nrows];
    let mut selected = Vec::new();
    loop {
        let best = (0..nrows)
            .filter(|&i| !taken[i])
            .map(|i| (i, residual[i].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((idx, norm)) = best else { break };
        if norm <= tol {
            break;
        }
        let q = &residual[idx] / norm;
        for i in 0..nrows {
            if !taken[i] && i != idx {
                let coeff = residual[i].dot(&q);
                residual[i] -= coeff * &q;
            }
        }
        taken[idx] = true;
        selected.push(idx);
    }
    selected.sort_unstable();
    let m_bar = DMatrix::from_fn(selected.len(), m.ncols(), |r, c| m[(selected[r], c)]);
    let sv = m_bar.svd(false, false).singular_values;
    let s_max = sv[0];
    let s_min = sv[sv.len() - 1];
    Ok(s_max / (s_min * s_min))
}

/// Stacks `M₁ = [L⁻; B_diagᵀ]` from the expanded signed Laplacian and the
/// block-diagonal coupling. `matrices` must be expanded with block size `M`.
pub fn assemble_m1(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
) -> Result<DMatrix<f64>, BoundsError> {
    if matrices.block_size() != problem.m_constraints() {
        return Err(BoundsError::BlockSizeMismatch);
    }
    let l_minus = matrices.signed_laplacian_expanded();
    let b_diag = problem.coupling_block_diag();
    let (nm, n_total) = (l_minus.nrows(), b_diag.ncols());
    let mut m1 = DMatrix::zeros(nm + n_total, nm);
    m1.view_mut((0, 0), (nm, nm)).copy_from(&l_minus);
    m1.view_mut((nm, 0), (n_total, nm))
        .copy_from(&b_diag.transpose());
    Ok(m1)
}

/// Stacks `M₂ = [[Aᵀ, L⁻], [0, A], [0, B_diagᵀ]]` (columns: the stacked edge
/// multiplier, then the stacked dual copies).
pub fn assemble_m2(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
) -> Result<DMatrix<f64>, BoundsError> {
    if matrices.block_size() != problem.m_constraints() {
        return Err(BoundsError::BlockSizeMismatch);
    }
    let a = matrices.incidence_expanded();
    let l_minus = matrices.signed_laplacian_expanded();
    let b_diag = problem.coupling_block_diag();
    let (em, nm, n_total) = (a.nrows(), l_minus.nrows(), b_diag.ncols());
    let mut m2 = DMatrix::zeros(nm + em + n_total, em + nm);
    m2.view_mut((0, 0), (nm, em)).copy_from(&a.transpose());
    m2.view_mut((0, em), (nm, nm)).copy_from(&l_minus);
    m2.view_mut((nm, em), (em, nm)).copy_from(&a);
    m2.view_mut((nm + em, em), (n_total, nm))
        .copy_from(&b_diag.transpose());
    Ok(m2)
}

/// Closed-form spectral bounds on the Hoffman constants, valid when the
/// assembled coupling `B = [B₁, …, B_N]` has full row rank.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThetaBounds {
    /// `ζ_B = 2√N·σ_max(B_diag)/σ_min(B)`.
    pub zeta_b: f64,
    /// Upper bound on `θ₁ = θ₂` through the graph spectrum.
    pub theta12_bound: f64,
    /// Upper bound on `θ₃` through the graph spectrum.
    pub theta3_bound: f64,
}

/// Computes the spectral upper bounds on `θ₁ = θ₂` and `θ₃`:
///
/// ```text
/// θ₁ ≤ (1+ζ_B)²σ_max(L⁻)/σ_min²(L⁻) + 4(1+ζ_B)²/σ_max(B_diag)
/// θ₃ ≤ (2√σ_max(L⁻)+σ_max(L⁻))(3+√σ_max(L⁻))²(1+ζ_B)²/σ_min(L⁻)
///      + 4(1+ζ_B)²(3+√σ_max(L⁻))²/σ_max(B_diag)
/// ```
///
/// with `σ_min(L⁻)` the smallest nonzero singular value of the signed
/// Laplacian. Errors when `B` is rank deficient.
pub fn theta_bounds_fullrank(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
) -> Result<ThetaBounds, BoundsError> {
    let b_full = problem.coupling_assembled();
    let sv = b_full.svd(false, false).singular_values;
    let sigma_min_b = sv[sv.len() - 1];
    if sv.len() < problem.m_constraints() || sigma_min_b <= RANK_TOL * sv[0] {
        return Err(BoundsError::RankDeficientCoupling);
    }
    let n = problem.n_agents() as f64;
    let sigma_max_bdiag = problem.b_max;
    let zeta_b = 2.0 * n.sqrt() * sigma_max_bdiag / sigma_min_b;

    let spectra = spectral_summary(matrices);
    let smax = spectra.sigma_max_minus;
    let smin = spectra.sigma_min_minus;
    let one_zb_sq = (1.0 + zeta_b) * (1.0 + zeta_b);
    let theta12_bound = one_zb_sq * smax / (smin * smin) + 4.0 * one_zb_sq / sigma_max_bdiag;
    let three_sq = (3.0 + smax.sqrt()) * (3.0 + smax.sqrt());
    let theta3_bound = (2.0 * smax.sqrt() + smax) * three_sq * one_zb_sq / smin
        + 4.0 * one_zb_sq * three_sq / sigma_max_bdiag;
    Ok(ThetaBounds {
        zeta_b,
        theta12_bound,
        theta3_bound,
    })
}

/// The error-bound constants of the descent analysis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorConstants {
    /// `K = 1/(p+γ⁻) + ρ²(p+γ⁺)`, the recurring curvature aggregate.
    pub cap_k: f64,
    /// `a₁ = (θ₁²K²/(2ρ) + ρ)/K`.
    pub a1: f64,
    /// `a₂ = θ₁⁴K²/ρ² + 2θ₁²`.
    pub a2: f64,
    /// `a₃ = θ₂²σ₃²((p+γ⁺)² + B_max²/ρ²)`.
    pub a3: f64,
    /// `a₄ = ½(θ₃²/(p+γ⁻) + ρ²θ₃²(p+γ⁺))² + θ₃²/ρ²`.
    pub a4: f64,
    /// `a₅ = B_max²σ₄²/(Kρ)`; requires ζ.
    pub a5: Option<f64>,
    /// `a₆ = 2θ₁²B_max²σ₄²/ρ²`; requires ζ.
    pub a6: Option<f64>,
}

/// Evaluates `a₁, …, a₆` from the curvature data and the Hoffman constants.
/// `a₅, a₆` need the inexact step size ζ and are `None` without it.
#[allow(clippy::too_many_arguments)]
pub fn error_constants(
    p: f64,
    gamma_minus: f64,
    gamma_plus: f64,
    b_max: f64,
    rho: f64,
    theta1: f64,
    theta2: f64,
    theta3: f64,
    zeta: Option<f64>,
) -> Result<ErrorConstants, BoundsError> {
    let pert = perturbation_constants(p, gamma_minus, gamma_plus, b_max)?;
    let cap_k = 1.0 / (p + gamma_minus) + rho * rho * (p + gamma_plus);
    let a1 = (theta1 * theta1 * cap_k * cap_k / (2.0 * rho) + rho) / cap_k;
    let a2 = theta1.powi(4) * cap_k * cap_k / (rho * rho) + 2.0 * theta1 * theta1;
    let a3 = theta2 * theta2
        * pert.sigma3
        * pert.sigma3
        * ((p + gamma_plus) * (p + gamma_plus) + b_max * b_max / (rho * rho));
    let inner = theta3 * theta3 / (p + gamma_minus)
        + rho * rho * theta3 * theta3 * (p + gamma_plus);
    let a4 = 0.5 * inner * inner + theta3 * theta3 / (rho * rho);
    let (a5, a6) = match zeta {
        Some(z) => {
            let s4 = pert.sigma4(z);
            (
                Some(b_max * b_max * s4 * s4 / (cap_k * rho)),
                Some(2.0 * theta1 * theta1 * b_max * b_max * s4 * s4 / (rho * rho)),
            )
        }
        None => (None, None),
    };
    Ok(ErrorConstants {
        cap_k,
        a1,
        a2,
        a3,
        a4,
        a5,
        a6,
    })
}

/// `κ = max{2(p² + (γ⁺)²), N·B_max²}`: translating a prox-map gap into a
/// KKT tolerance.
pub fn kappa(p: f64, gamma_plus: f64, n_agents: usize, b_max: f64) -> f64 {
    (2.0 * (p * p + gamma_plus * gamma_plus)).max(n_agents as f64 * b_max * b_max)
}

/// Joint conditions the inexact variant places on `(p, ζ, α)` (with `ρ > 1/2`
/// and β under the common cap).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InexactRegime {
    /// Lower bound on p.
    pub p_min: f64,
    /// Open interval for the gradient step ζ.
    pub zeta_min: f64,
    pub zeta_max: f64,
    /// Strict cap on α (evaluated at the supplied ζ).
    pub alpha_max: f64,
}

/// Admissible step-size ranges for both algorithm variants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepBounds {
    /// Exact variant: `α ≤ min{ρ/5, ρ/(8a₁λ_max²)}`.
    pub alpha_max_exact: f64,
    /// Common cap: `β < (1/2 + 20pσ₂²a₂λ_max²/ρ + ρ(σ₁²+2σ₂²a₃)/(10pσ₂²a₂λ_max²))⁻¹`.
    pub beta_max: f64,
    /// Present when a ζ was supplied and the inexact conditions are evaluable.
    pub inexact: Option<InexactRegime>,
}

/// Evaluates the step-size caps. For the inexact variant the ζ interval
/// emptiness is reported as an error (it signals p is too small).
pub fn step_bounds(
    p: f64,
    gamma_minus: f64,
    gamma_plus: f64,
    b_max: f64,
    rho: f64,
    lambda_max: f64,
    theta1: f64,
    errors: &ErrorConstants,
    zeta: Option<f64>,
) -> Result<StepBounds, BoundsError> {
    let pert = perturbation_constants(p, gamma_minus, gamma_plus, b_max)?;
    let lam_sq = lambda_max * lambda_max;
    let alpha_max_exact = (rho / 5.0).min(rho / (8.0 * errors.a1 * lam_sq));
    let s2sq_a2 = pert.sigma2 * pert.sigma2 * errors.a2;
    let beta_max = 1.0
        / (0.5
            + 20.0 * p * s2sq_a2 * lam_sq / rho
            + rho * (pert.sigma1 * pert.sigma1 + 2.0 * pert.sigma2 * pert.sigma2 * errors.a3)
                / (10.0 * p * s2sq_a2 * lam_sq));

    let inexact = match zeta {
        None => None,
        Some(z) => {
            let p_min = (gamma_plus - 2.0 * gamma_minus)
                .max(32.0 * (2.0 * rho - 1.0) * b_max * b_max / (5.0 * lam_sq * rho * rho)
                    - gamma_minus)
                .max(32.0 * b_max * b_max - gamma_minus)
                .max((2.0 * gamma_plus - 7.0 * gamma_minus) / 5.0);
            let zeta_min = 1.0 / (p + gamma_minus);
            // Caps with vanishing denominators are vacuous (+inf).
            let guard = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
            let zeta_max = guard(5.0, 2.0 * (gamma_plus - gamma_minus))
                .min(2.0 / (p + gamma_plus))
                .min(guard(1.0, 32.0 * b_max * b_max))
                .min(guard(
                    5.0 * errors.a2 * lam_sq * rho * rho,
                    64.0 * (2.0 * rho - 1.0) * theta1 * theta1 * b_max * b_max,
                ));
            if zeta_max <= zeta_min {
                return Err(BoundsError::EmptyZetaInterval {
                    lower: zeta_min,
                    upper: zeta_max,
                });
            }
            let zp = z * (p + gamma_minus);
            let alpha_max = (rho / 5.0)
                .min((2.0 * rho - 1.0) / (16.0 * errors.a1 * lam_sq))
                .min(guard(
                    rho * zp * (1.0 + rho * rho * (p + gamma_plus)),
                    8.0 * b_max * b_max * (zp + 3.0) * (zp + 3.0),
                ));
            Some(InexactRegime {
                p_min,
                zeta_min,
                zeta_max,
                alpha_max,
            })
        }
    };
    Ok(StepBounds {
        alpha_max_exact,
        beta_max,
        inexact,
    })
}

/// Everything the theory defines for one (instance, graph, config) triple,
/// plus a verdict on whether the config sits in the proven regime.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantSheet {
    // Inputs echoed for context.
    pub p: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: Option<f64>,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub b_max: f64,
    pub lambda_max: f64,
    // Perturbation constants.
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub sigma4: Option<f64>,
    // Hoffman constants actually used in the a-constants, and their source.
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    /// "direct" (SVD of the structured systems) or "spectral_bound".
    pub theta_source: String,
    /// Closed-form bounds, when the coupling has full row rank.
    pub theta_bounds: Option<ThetaBounds>,
    // Error constants.
    pub errors: ErrorConstants,
    pub kappa: f64,
    // Step-size caps.
    pub steps: StepBounds,
    // Descent constants, informational.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: Option<f64>,
    pub delta: f64,
    /// Empty when the config sits inside the proven regime.
    pub regime_violations: Vec<String>,
}

impl ConstantSheet {
    /// Human-readable key-value rendering (one `name = value` per line).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
        kv("p", format!("{:.6e}", self.p));
        kv("rho", format!("{:.6e}", self.rho));
        kv("alpha", format!("{:.6e}", self.alpha));
        kv("beta", format!("{:.6e}", self.beta));
        kv("zeta", opt(self.zeta));
        kv("gamma_minus", format!("{:.6e}", self.gamma_minus));
        kv("gamma_plus", format!("{:.6e}", self.gamma_plus));
        kv("b_max", format!("{:.6e}", self.b_max));
        kv("lambda_max", format!("{:.6e}", self.lambda_max));
        kv("sigma1", format!("{:.6e}", self.sigma1));
        kv("sigma2", format!("{:.6e}", self.sigma2));
        kv("sigma3", format!("{:.6e}", self.sigma3));
        kv("sigma4", opt(self.sigma4));
        kv("theta1", format!("{:.6e}", self.theta1));
        kv("theta2", format!("{:.6e}", self.theta2));
        kv("theta3", format!("{:.6e}", self.theta3));
        kv("theta_source", self.theta_source.clone());
        if let Some(tb) = &self.theta_bounds {
            kv("zeta_b", format!("{:.6e}", tb.zeta_b));
            kv("theta12_bound", format!("{:.6e}", tb.theta12_bound));
            kv("theta3_bound", format!("{:.6e}", tb.theta3_bound));
        }
        kv("cap_k", format!("{:.6e}", self.errors.cap_k));
        kv("a1", format!("{:.6e}", self.errors.a1));
        kv("a2", format!("{:.6e}", self.errors.a2));
        kv("a3", format!("{:.6e}", self.errors.a3));
        kv("a4", format!("{:.6e}", self.errors.a4));
        kv("a5", opt(self.errors.a5));
        kv("a6", opt(self.errors.a6));
        kv("kappa", format!("{:.6e}", self.kappa));
        kv("alpha_max_exact", format!("{:.6e}", self.steps.alpha_max_exact));
        kv("beta_max", format!("{:.6e}", self.steps.beta_max));
        if let Some(ix) = &self.steps.inexact {
            kv("inexact_p_min", format!("{:.6e}", ix.p_min));
            kv("inexact_zeta_min", format!("{:.6e}", ix.zeta_min));
            kv("inexact_zeta_max", format!("{:.6e}", ix.zeta_max));
            kv("inexact_alpha_max", format!("{:.6e}", ix.alpha_max));
        }
        kv("c1", format!("{:.6e}", self.c1));
        kv("c2", format!("{:.6e}", self.c2));
        kv("c3", format!("{:.6e}", self.c3));
        kv("c4", opt(self.c4));
        kv("delta", format!("{:.6e}", self.delta));
        if self.regime_violations.is_empty() {
            kv("regime", "inside proven bounds".to_string());
        } else {
            for v in &self.regime_violations {
                kv("regime_violation", v.clone());
            }
        }
        out
    }
}

/// Assembles the full constant sheet for a problem/graph/config triple.
///
/// Hoffman constants come from the direct structured-system estimate when
/// the system is small enough, falling back to the closed-form spectral
/// bounds on large instances (conservative: larger θ only shrinks the
/// admissible steps). `matrices` must be expanded with block size `M`.
pub fn constant_sheet(
    problem: &CoupledProblem,
    matrices: &GraphMatrices,
    config: &SolverConfig,
) -> Result<ConstantSheet, BoundsError> {
    if matrices.block_size() != problem.m_constraints() {
        return Err(BoundsError::BlockSizeMismatch);
    }
    let (p, rho, alpha, beta, zeta) =
        (config.p, config.rho, config.alpha, config.beta, config.zeta);
    let gm = problem.gamma_minus();
    let gp = problem.gamma_plus();
    let b_max = problem.b_max;
    let pert = perturbation_constants(p, gm, gp, b_max)?;
    let spectra = spectral_summary(matrices);
    let lambda_max = spectra.lambda_max_plus;

    let theta_bounds = theta_bounds_fullrank(problem, matrices).ok();
    let nm = problem.n_agents() * problem.m_constraints();
    let (theta1, theta3, theta_source) = if nm <= DIRECT_THETA_DIM_CAP {
        let t1 = hoffman_theta(&assemble_m1(problem, matrices)?)?;
        let t3 = hoffman_theta(&assemble_m2(problem, matrices)?)?;
        (t1, t3, "direct")
    } else {
        let tb = theta_bounds
            .as_ref()
            .ok_or(BoundsError::RankDeficientCoupling)?;
        (tb.theta12_bound, tb.theta3_bound, "spectral_bound")
    };
    let theta2 = theta1;

    let errors = error_constants(p, gm, gp, b_max, rho, theta1, theta2, theta3, zeta)?;
    let steps = step_bounds(p, gm, gp, b_max, rho, lambda_max, theta1, &errors, zeta)?;

    // Descent constants at the supplied (alpha, beta), with the proof's
    // delta choice. Informational: positivity certifies the proof's descent
    // decomposition, but the assertable artifact is the run-time descent.
    let lam_sq = lambda_max * lambda_max;
    let s2sq_a2 = pert.sigma2 * pert.sigma2 * errors.a2;
    let delta = 20.0 * p * s2sq_a2 * lam_sq / rho;
    let c1 = (rho - 5.0 * alpha) / 2.0;
    let c2 = rho - (2.0 * alpha * errors.a1 + rho / (5.0 * lam_sq)) * lam_sq;
    let c3 = p
        * (-0.5 + 1.0 / beta
            - delta
            - 2.0 * pert.sigma1 * pert.sigma1 / delta
            - 4.0 * pert.sigma2 * pert.sigma2 * errors.a3 / delta);
    let c4 = match (zeta, errors.a5, errors.a6) {
        (Some(z), Some(a5), Some(a6)) => {
            let s4 = pert.sigma4(z);
            let delta_ix = 20.0 * p * s2sq_a2 * lam_sq / (rho - 0.5);
            Some(
                1.0 / z
                    - (gp - gm) / 2.0
                    - 2.0 * alpha * a5
                    - 4.0 * p * pert.sigma2 * pert.sigma2 * a6 / delta_ix
                    - b_max * b_max * s4 * s4 / 2.0,
            )
        }
        _ => None,
    };

    // Regime verdict for the supplied config.
    let mut violations = Vec::new();
    match config.mode {
        Mode::ExactPdc => {
            if alpha > steps.alpha_max_exact {
                violations.push(format!(
                    "alpha {alpha:.3e} exceeds exact-variant cap {:.3e}",
                    steps.alpha_max_exact
                ));
            }
            if beta >= steps.beta_max {
                violations.push(format!(
                    "beta {beta:.3e} not below cap {:.3e}",
                    steps.beta_max
                ));
            }
        }
        Mode::InexactIpdc => {
            if rho <= 0.5 {
                violations.push(format!("rho {rho:.3e} not above 1/2"));
            }
            let ix = steps.inexact.as_ref().ok_or(BoundsError::MissingZeta)?;
            if p <= ix.p_min {
                violations.push(format!("p {p:.3e} not above {:.3e}", ix.p_min));
            }
            let z = zeta.unwrap();
            if z <= ix.zeta_min || z >= ix.zeta_max {
                violations.push(format!(
                    "zeta {z:.3e} outside ({:.3e}, {:.3e})",
                    ix.zeta_min, ix.zeta_max
                ));
            }
            if alpha >= ix.alpha_max {
                violations.push(format!(
                    "alpha {alpha:.3e} not below inexact cap {:.3e}",
                    ix.alpha_max
                ));
            }
            if beta >= steps.beta_max {
                violations.push(format!(
                    "beta {beta:.3e} not below cap {:.3e}",
                    steps.beta_max
                ));
            }
        }
    }

    Ok(ConstantSheet {
        p,
        rho,
        alpha,
        beta,
        zeta,
        gamma_minus: gm,
        gamma_plus: gp,
        b_max,
        lambda_max,
        sigma1: pert.sigma1,
        sigma2: pert.sigma2,
        sigma3: pert.sigma3,
        sigma4: zeta.map(|z| pert.sigma4(z)),
        theta1,
        theta2,
        theta3,
        theta_source: theta_source.to_string(),
        theta_bounds,
        errors,
        kappa: kappa(p, gp, problem.n_agents(), b_max),
        steps,
        c1,
        c2,
        c3,
        c4,
        delta,
        regime_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::problem::build_quadratic_instance;
    use approx::assert_abs_diff_eq;
    use approx::assert_relative_eq;

    #[test]
    fn perturbation_constants_hand_values() {
        let c = perturbation_constants(2.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(c.sigma1, 8.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sigma2, 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sigma3, 2.0 / 3.0, epsilon = 1e-15);
        // At the inexact lower boundary zeta = 1/(p+gamma_minus), sigma4 = 4.
        assert_abs_diff_eq!(c.sigma4(1.0 / 3.0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma3_tends_to_one_for_large_p() {
        let c = perturbation_constants(1e9, 1.0, 1.0, 1.0).unwrap();
        assert!((c.sigma3 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn perturbation_rejects_weak_p() {
        assert!(matches!(
            perturbation_constants(0.5, -1.0, 1.0, 1.0),
            Err(BoundsError::CurvatureTooWeak { .. })
        ));
    }

    #[test]
    fn hoffman_theta_rank_one_row_pair() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        // Maximal independent row set is a single row [1, -1]: both singular
        // values of the 1x2 submatrix are sqrt(2).
        let theta = hoffman_theta(&m).unwrap();
        assert_abs_diff_eq!(theta, 2.0_f64.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn hoffman_theta_identity_and_scaling() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_abs_diff_eq!(hoffman_theta(&id).unwrap(), 1.0, epsilon = 1e-12);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let theta = hoffman_theta(&m).unwrap();
        let theta_scaled = hoffman_theta(&(2.0 * &m)).unwrap();
        assert_relative_eq!(theta_scaled, theta / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn hoffman_theta_rejects_zero() {
        assert!(matches!(
            hoffman_theta(&DMatrix::zeros(3, 3)),
            Err(BoundsError::ZeroMatrix)
        ));
    }

    fn two_agent_scalar_instance() -> (CoupledProblem, GraphMatrices) {
        use crate::problem::{LocalObjective, ObjectiveKind};
        let objs: Vec<LocalObjective> = (0..2)
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
        let problem = CoupledProblem::new(
            objs,
            vec![DMatrix::from_row_slice(1, 1, &[1.0]); 2],
            DVector::zeros(1),
        )
        .unwrap();
        let graph = Graph::new(2, &[(0, 1)]).unwrap();
        let matrices = GraphMatrices::derive(&graph, 1);
        (problem, matrices)
    }

    #[test]
    fn theta_bound_two_agent_hand_value() {
        // Single edge, scalar B_i = 1: zeta_B = 2*sqrt(2)/sqrt(2) = 2 and the
        // first bound is 9*2/4 + 4*9/1 = 40.5.
        let (problem, matrices) = two_agent_scalar_instance();
        let tb = theta_bounds_fullrank(&problem, &matrices).unwrap();
        assert_abs_diff_eq!(tb.zeta_b, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tb.theta12_bound, 40.5, epsilon = 1e-10);
    }

    #[test]
    fn direct_hoffman_below_spectral_bound() {
        for seed in 0..10 {
            let problem = build_quadratic_instance(seed, 3, 3, 2, 1.0).unwrap();
            let graph = Graph::cycle(3).unwrap();
            let matrices = GraphMatrices::derive(&graph, 2);
            if let Ok(tb) = theta_bounds_fullrank(&problem, &matrices) {
                let t1 = hoffman_theta(&assemble_m1(&problem, &matrices).unwrap()).unwrap();
                let t3 = hoffman_theta(&assemble_m2(&problem, &matrices).unwrap()).unwrap();
                assert!(t1 <= tb.theta12_bound, "seed {seed}: {t1} > {}", tb.theta12_bound);
                assert!(t3 <= tb.theta3_bound, "seed {seed}: {t3} > {}", tb.theta3_bound);
            }
        }
    }

    #[test]
    fn singular_value_bounds_on_structured_systems() {
        // sigma_min(M1) >= min{sigma_min(L-)/(1+zeta_B), sigma_max(B_diag)/(2(1+zeta_B))}
        // sigma_max(M1) <= sigma_max(L-) + sigma_max(B_diag), and the
        // square-root analogues for M2. The lower bounds combine two
        // mutually exclusive cases (consensus-heavy vs orthogonal-heavy
        // directions), so the guaranteed aggregate is the smaller of the
        // two case bounds.
        for seed in 0..10 {
            let problem = build_quadratic_instance(100 + seed, 4, 3, 2, 1.0).unwrap();
            let graph = Graph::cycle(4).unwrap();
            let matrices = GraphMatrices::derive(&graph, 2);
            let Ok(tb) = theta_bounds_fullrank(&problem, &matrices) else {
                continue;
            };
            let spectra = spectral_summary(&matrices);
            let (smin_l, smax_l) = (spectra.sigma_min_minus, spectra.sigma_max_minus);
            let bd = problem.b_max;
            let one_zb = 1.0 + tb.zeta_b;

            // "sigma_min" throughout means the smallest *nonzero* singular
            // value (M2 has a null space whenever the graph has a cycle).
            let min_nonzero = |m: DMatrix<f64>| {
                let sv = m.svd(false, false).singular_values;
                let cutoff = 1e-10 * sv[0];
                (sv[0], sv.iter().copied().filter(|&s| s > cutoff).fold(f64::INFINITY, f64::min))
            };
            let m1 = assemble_m1(&problem, &matrices).unwrap();
            let (s1_max, s1_min) = min_nonzero(m1);
            assert!(s1_min + 1e-12 >= (smin_l / one_zb).min(bd / (2.0 * one_zb)));
            assert!(s1_max <= smax_l + bd + 1e-12);

            let m2 = assemble_m2(&problem, &matrices).unwrap();
            let (s2_max, s2_min) = min_nonzero(m2);
            let lower =
                (smin_l.sqrt() / one_zb).min(bd / (2.0 * one_zb)) / (3.0 + smax_l.sqrt());
            assert!(s2_min + 1e-12 >= lower);
            assert!(s2_max <= 2.0 * smax_l.sqrt() + smax_l + bd + 1e-12);
        }
    }

    #[test]
    fn stacked_block_operator_norm_subadditive() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
            let b = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            let mut stacked = DMatrix::zeros(5, 4);
            stacked.view_mut((0, 0), (3, 4)).copy_from(&a);
            stacked.view_mut((3, 0), (2, 4)).copy_from(&b);
            let s = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values[0];
            assert!(s(&stacked) <= s(&a) + s(&b) + 1e-12);
        }
    }

    #[test]
    fn error_constants_hand_values() {
        // p = 2, gamma = +-1, rho = 1, theta1 = 1: K = 10/3 and
        // a2 = K^2 + 2 = 100/9 + 2.
        let e = error_constants(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(e.cap_k, 10.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.a2, 100.0 / 9.0 + 2.0, epsilon = 1e-12);
        // theta1 = 0 zeroes a2 entirely.
        let e0 = error_constants(2.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(e0.a2, 0.0, epsilon = 1e-15);
        // b_max = 0 degenerates a3 and kills a5, a6.
        let eb = error_constants(2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, Some(0.4)).unwrap();
        let pert = perturbation_constants(2.0, 1.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(
            eb.a3,
            pert.sigma3 * pert.sigma3 * 9.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(eb.a5.unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eb.a6.unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sigma_monotonicity_in_curvature() {
        let base = perturbation_constants(2.0, 0.5, 1.0, 1.0).unwrap();
        let stiffer = perturbation_constants(2.0, 1.0, 1.0, 1.0).unwrap();
        assert!(stiffer.sigma1 < base.sigma1);
        assert!(stiffer.sigma2 < base.sigma2);
        let smoother = perturbation_constants(2.0, 0.5, 2.0, 1.0).unwrap();
        assert!(smoother.sigma1 > base.sigma1);
        assert!(smoother.sigma2 > base.sigma2);
    }

    #[test]
    fn kappa_hand_values() {
        assert_abs_diff_eq!(kappa(2.0, 1.0, 4, 1.0), 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa(2.0, 1.0, 4, 0.0), 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa(1.0, 1.0, 100, 1.0), 100.0, epsilon = 1e-15);
    }

    #[test]
    fn alpha_cap_picks_the_binding_term() {
        // With a1*lambda_max^2 >= 5/8 the second term binds.
        let e = error_constants(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, None).unwrap();
        let sb = step_bounds(2.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0, &e, None).unwrap();
        assert!(e.a1 * 4.0 >= 5.0 / 8.0);
        assert_abs_diff_eq!(
            sb.alpha_max_exact,
            1.0 / (8.0 * e.a1 * 4.0),
            epsilon = 1e-15
        );
        // The beta bracket always exceeds 1/2, so beta_max < 2.
        assert!(sb.beta_max < 2.0);
    }

    #[test]
    fn empty_zeta_interval_is_reported() {
        // Tiny p with strong coupling: 1/(p+gamma_minus) exceeds 1/(32 b_max^2).
        let e = error_constants(0.5, 0.1, 0.2, 2.0, 1.0, 1.0, 1.0, 1.0, Some(0.1)).unwrap();
        assert!(matches!(
            step_bounds(0.5, 0.1, 0.2, 2.0, 1.0, 2.0, 1.0, &e, Some(0.1)),
            Err(BoundsError::EmptyZetaInterval { .. })
        ));
    }

    #[test]
    fn theta_bound_nondecreasing_in_cycle_size() {
        // Fixed scalar blocks on growing cycles: the spectral bound grows
        // with N (sigma_min(L-) shrinks, zeta_B grows with sqrt(N)).
        use crate::problem::{LocalObjective, ObjectiveKind};
        let mut last = 0.0;
        for n in (4..=32).step_by(4) {
            let objs: Vec<LocalObjective> = (0..n)
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
            let problem = CoupledProblem::new(
                objs,
                vec![DMatrix::from_row_slice(1, 1, &[1.0]); n],
                DVector::zeros(1),
            )
            .unwrap();
            let graph = Graph::cycle(n).unwrap();
            let matrices = GraphMatrices::derive(&graph, 1);
            let tb = theta_bounds_fullrank(&problem, &matrices).unwrap();
            assert!(tb.theta12_bound >= last - 1e-9, "n = {n}");
            last = tb.theta12_bound;
        }
    }

    #[test]
    fn constant_sheet_assembles_and_serializes() {
        let problem = build_quadratic_instance(42, 4, 3, 2, 1.0).unwrap();
        let graph = Graph::cycle(4).unwrap();
        let matrices = GraphMatrices::derive(&graph, 2);
        let mut config = SolverConfig::new(Mode::ExactPdc);
        config.p = 2.0;
        config.rho = 1.0;
        let sheet_probe = constant_sheet(&problem, &matrices, &config).unwrap();
        // Certified steps produce a clean verdict.
        config.alpha = 0.9 * sheet_probe.steps.alpha_max_exact;
        config.beta = 0.9 * sheet_probe.steps.beta_max;
        let sheet = constant_sheet(&problem, &matrices, &config).unwrap();
        assert!(sheet.regime_violations.is_empty());
        assert!(sheet.c1 > 0.0 && sheet.c2 > 0.0 && sheet.c3 > 0.0);
        assert_eq!(sheet.theta1, sheet.theta2);
        assert!(sheet.theta1 > 0.0 && sheet.theta3 > 0.0);
        let json = serde_json::to_string(&sheet).unwrap();
        assert!(json.contains("alpha_max_exact"));
        assert!(sheet.to_text().contains("regime = inside proven bounds"));
        // An oversized alpha is flagged.
        config.alpha = 10.0 * sheet.steps.alpha_max_exact.max(1.0);
        let bad = constant_sheet(&problem, &matrices, &config).unwrap();
        assert!(!bad.regime_violations.is_empty());
    }
}
