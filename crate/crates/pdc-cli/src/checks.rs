//! Named verification suites behind `pdc check <suite>`.
//!
//! Each suite runs a battery of numeric assertions against independently
//! computed references and reports one line per check:
//! `check <suite>/<name>: PASS|WARN|FAIL <detail>`. WARN marks conditions
//! outside the proven regime (informational), never a hard failure.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdc_core::bounds::{
    assemble_m1, assemble_m2, constant_sheet, hoffman_theta, theta_bounds_fullrank,
};
use pdc_core::diagnostics::eps_kkt;
use pdc_core::engine::{
    brute_force_inner_max, run, x_update_exact, y_update, AgentContext, Mode, NeighborView,
    SolverConfig,
};
use pdc_core::graph::{
    cycle_sigma_min_prediction, spectral_summary, split_blocks, Graph, GraphMatrices,
};
use pdc_core::problem::{build_quadratic_instance, kkt_oracle_quadratic};

use crate::CliError;

/// One line of a suite report.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

impl CheckLine {
    fn pass(name: &str, detail: String) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Pass,
            detail,
        }
    }
    fn of(name: &str, ok: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }
    fn warn(name: &str, detail: String) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Warn,
            detail,
        }
    }
}

/// Runs a suite by name. Unknown names are a config error.
pub fn run_suite(suite: &str) -> Result<Vec<CheckLine>, CliError> {
    match suite {
        "spectra" => Ok(suite_spectra()),
        "bounds" => Ok(suite_bounds()),
        "oracles" => Ok(suite_oracles()),
        "descent" => Ok(suite_descent()),
        "rate" => Ok(suite_rate()),
        other => Err(CliError::Config(format!(
            "unknown check suite `{other}` (expected spectra, bounds, oracles, descent, rate)"
        ))),
    }
}

/// Renders and classifies a report; `Err` when any line failed.
pub fn report(suite: &str, lines: &[CheckLine]) -> Result<String, CliError> {
    let mut out = String::new();
    let mut failed = 0;
    for l in lines {
        let tag = match l.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Warn => "WARN",
            CheckStatus::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        out.push_str(&format!("check {suite}/{}: {tag} {}\n", l.name, l.detail));
    }
    if failed > 0 {
        out.push_str(&format!("suite {suite}: {failed} check(s) failed\n"));
        Err(CliError::Check(out))
    } else {
        out.push_str(&format!("suite {suite}: all checks passed\n"));
        Ok(out)
    }
}

/// Cycle-graph spectral identities and connectivity detection.
fn suite_spectra() -> Vec<CheckLine> {
    let mut lines = Vec::new();
    let mut worst_sigma = 0.0_f64;
    let mut worst_lambda = f64::NEG_INFINITY;
    for n in 3..=64 {
        let matrices = GraphMatrices::derive(&Graph::cycle(n).unwrap(), 1);
        let s = spectral_summary(&matrices);
        worst_sigma = worst_sigma.max((s.sigma_min_minus - cycle_sigma_min_prediction(n)).abs());
        worst_lambda = worst_lambda.max(s.lambda_max_plus);
        if !s.connected {
            lines.push(CheckLine::of("cycle_connected", false, format!("n = {n}")));
        }
    }
    lines.push(CheckLine::of(
        "cycle_sigma_min_formula",
        worst_sigma <= 1e-12,
        format!("max |sigma_min - (2 - 2cos(2pi/N))| = {worst_sigma:.3e} over N in 3..=64"),
    ));
    lines.push(CheckLine::of(
        "cycle_lambda_max_cap",
        worst_lambda <= 4.0 + 1e-12,
        format!("max lambda_max(L+) = {worst_lambda:.15} (cap 4)"),
    ));
    // Two disjoint triangles must be flagged as disconnected.
    let split = Graph::new(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
    let s = spectral_summary(&GraphMatrices::derive(&split, 1));
    lines.push(CheckLine::of(
        "disconnected_detected",
        !s.connected,
        "two disjoint triangles".into(),
    ));
    lines
}

/// Singular-value bounds on the structured systems and the closed-form
/// theta bounds.
fn suite_bounds() -> Vec<CheckLine> {
    let mut lines = Vec::new();
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut theta_viol = 0usize;
    for seed in 0..50u64 {
        let n = 3 + (seed % 4) as usize;
        let problem = build_quadratic_instance(seed, n, 3, 2, 1.0).unwrap();
        let graph = Graph::cycle(n).unwrap();
        let matrices = GraphMatrices::derive(&graph, 2);
        let Ok(tb) = theta_bounds_fullrank(&problem, &matrices) else {
            continue;
        };
        checked += 1;
        let spectra = spectral_summary(&matrices);
        let (smin_l, smax_l) = (spectra.sigma_min_minus, spectra.sigma_max_minus);
        let bd = problem.b_max;
        let one_zb = 1.0 + tb.zeta_b;
        let min_nonzero = |m: DMatrix<f64>| {
            let sv = m.svd(false, false).singular_values;
            let cutoff = 1e-10 * sv[0];
            (
                sv[0],
                sv.iter().copied().filter(|&s| s > cutoff).fold(f64::INFINITY, f64::min),
            )
        };
        let m1 = assemble_m1(&problem, &matrices).unwrap();
        let (s1_max, s1_min) = min_nonzero(m1.clone());
        // Lower bounds take the smaller of the two case bounds (the case
        // split over consensus-heavy vs orthogonal-heavy directions makes
        // only one of them apply to any given direction).
        if s1_min + 1e-12 < (smin_l / one_zb).min(bd / (2.0 * one_zb))
            || s1_max > smax_l + bd + 1e-12
        {
            violations += 1;
        }
        let m2 = assemble_m2(&problem, &matrices).unwrap();
        let (s2_max, s2_min) = min_nonzero(m2.clone());
        let lower = (smin_l.sqrt() / one_zb).min(bd / (2.0 * one_zb)) / (3.0 + smax_l.sqrt());
        if s2_min + 1e-12 < lower || s2_max > 2.0 * smax_l.sqrt() + smax_l + bd + 1e-12 {
            violations += 1;
        }
        // Direct Hoffman estimates sit below the closed-form bounds.
        let t1 = hoffman_theta(&m1).unwrap();
        let t3 = hoffman_theta(&m2).unwrap();
        if t1 > tb.theta12_bound + 1e-9 || t3 > tb.theta3_bound + 1e-9 {
            theta_viol += 1;
        }
    }
    lines.push(CheckLine::of(
        "singular_value_bounds",
        violations == 0 && checked >= 40,
        format!("{violations} violations over {checked} full-row-rank instances"),
    ));
    lines.push(CheckLine::of(
        "hoffman_below_spectral_bound",
        theta_viol == 0,
        format!("{theta_viol} violations over {checked} instances"),
    ));
    // Operator-norm subadditivity of stacked blocks.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sub_viol = 0usize;
    for _ in 0..50 {
        let a = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let mut stacked = DMatrix::zeros(5, 4);
        stacked.view_mut((0, 0), (3, 4)).copy_from(&a);
        stacked.view_mut((3, 0), (2, 4)).copy_from(&b);
        let s = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values[0];
        if s(&stacked) > s(&a) + s(&b) + 1e-12 {
            sub_viol += 1;
        }
    }
    lines.push(CheckLine::of(
        "stacked_norm_subadditive",
        sub_viol == 0,
        format!("{sub_viol} violations over 50 random block pairs"),
    ));
    lines
}

/// KKT oracle, closed-form y-update vs dense inner maximization, and the
/// FISTA subsolver vs direct normal equations.
fn suite_oracles() -> Vec<CheckLine> {
    let mut lines = Vec::new();

    // KKT oracle produces machine-precision certificates.
    let mut worst_eps = 0.0_f64;
    for seed in 0..20u64 {
        let problem = build_quadratic_instance(seed, 4, 3, 3, 1.0).unwrap();
        let (x, _) = kkt_oracle_quadratic(&problem).unwrap();
        worst_eps = worst_eps.max(eps_kkt(&problem, &x).epsilon);
    }
    lines.push(CheckLine::of(
        "kkt_oracle_certifies",
        worst_eps <= 1e-14,
        format!("max epsilon = {worst_eps:.3e} over 20 instances"),
    ));

    // Closed-form y-update equals the dense inner maximization blockwise.
    let mut worst_gap = 0.0_f64;
    for seed in 0..20u64 {
        let n = 3 + (seed % 3) as usize;
        let problem = build_quadratic_instance(1000 + seed, n, 2, 2, 1.0).unwrap();
        let graph = Graph::cycle(n).unwrap();
        let matrices = GraphMatrices::derive(&graph, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<DVector<f64>> = problem
            .objectives
            .iter()
            .map(|o| DVector::from_fn(o.dim, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let ps: Vec<DVector<f64>> =
            (0..n).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let ys: Vec<DVector<f64>> =
            (0..n).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let rho = 0.7;
        let dense = brute_force_inner_max(&problem, &matrices, &xs, &ps, &ys, rho).unwrap();
        let dense_blocks = split_blocks(&dense, n, 2);
        let q_over_n = problem.rhs.clone() / n as f64;
        let violations = std::sync::atomic::AtomicU64::new(0);
        for i in 0..n {
            let view = NeighborView::new(&ys, i, graph.neighbors(i), &violations);
            let signless = pdc_core::engine::signless_neighbor_sum(&view);
            let b = &problem.coupling[i];
            let ctx = AgentContext {
                objective: &problem.objectives[i],
                b,
                q_over_n: &q_over_n,
                degree: graph.degree(i),
                b_norm_sq: 0.0,
            };
            let closed = y_update(&ctx, &xs[i], &ps[i], &signless, rho);
            worst_gap = worst_gap.max((closed - &dense_blocks[i]).amax());
        }
    }
    lines.push(CheckLine::of(
        "y_update_matches_dense_solve",
        worst_gap <= 1e-10,
        format!("max blockwise gap = {worst_gap:.3e} over 20 instances"),
    ));

    // FISTA subsolves agree with the quadratic normal equations, and the
    // stopping rule (not the budget) ends the solves.
    let mut worst_sub = 0.0_f64;
    let mut stopped = 0usize;
    let mut total = 0usize;
    for seed in 0..10u64 {
        let problem = build_quadratic_instance(2000 + seed, 4, 3, 2, 1.0).unwrap();
        let graph = Graph::cycle(4).unwrap();
        let q_over_n = problem.rhs.clone() / 4.0;
        let mut config = SolverConfig::new(Mode::ExactPdc);
        config.p = 2.0;
        config.rho = 1.0;
        config.subsolver_tol = 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..4 {
            let obj = &problem.objectives[i];
            let b = &problem.coupling[i];
            let bn = b.clone().svd(false, false).singular_values[0];
            let ctx = AgentContext {
                objective: obj,
                b,
                q_over_n: &q_over_n,
                degree: graph.degree(i),
                b_norm_sq: bn * bn,
            };
            let z = DVector::from_fn(obj.dim, |_, _| rng.gen_range(-1.0..1.0));
            let p_new = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let signless = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let out = x_update_exact(&ctx, &config, &z, &z, &p_new, &signless).unwrap();
            total += 1;
            if out.stopped_by_tol {
                stopped += 1;
            }
            // Normal equations of the same strongly convex subproblem.
            let w = &q_over_n + &p_new - &signless * config.rho;
            let (q_mat, c) = obj.quadratic_data().unwrap();
            let scale = 1.0 / (2.0 * config.rho * ctx.degree as f64);
            let lhs = q_mat
                + DMatrix::identity(obj.dim, obj.dim) * config.p
                + scale * b.transpose() * b;
            let rhs = &z * config.p - c + scale * b.transpose() * &w;
            let direct = lhs.lu().solve(&rhs).unwrap();
            worst_sub = worst_sub.max((out.x - direct).amax());
        }
    }
    lines.push(CheckLine::of(
        "fista_matches_normal_equations",
        worst_sub <= 1e-6,
        format!("max gap = {worst_sub:.3e} over {total} subproblems"),
    ));
    lines.push(CheckLine::of(
        "fista_stopping_rule_active",
        stopped == total,
        format!("{stopped}/{total} solves ended by the tolerance rule"),
    ));
    lines
}

/// Potential-function descent inside the certified step-size regime.
fn suite_descent() -> Vec<CheckLine> {
    let mut lines = Vec::new();
    let problem = build_quadratic_instance(7, 4, 2, 2, 1.0).unwrap();
    let graph = Graph::cycle(4).unwrap();
    let matrices = GraphMatrices::derive(&graph, 2);
    let mut config = SolverConfig::new(Mode::ExactPdc);
    config.p = 2.0;
    config.rho = 1.0;
    config.record_phi = true;
    config.max_rounds = 500;
    let sheet = constant_sheet(&problem, &matrices, &config).expect("sheet");
    config.alpha = 0.9 * sheet.steps.alpha_max_exact;
    config.beta = (0.9 * sheet.steps.beta_max).min(1.0);
    let sheet = constant_sheet(&problem, &matrices, &config).expect("sheet");
    if !sheet.regime_violations.is_empty() {
        lines.push(CheckLine::warn(
            "descent_regime",
            format!("out-of-regime config: {:?}", sheet.regime_violations),
        ));
        return lines;
    }
    lines.push(CheckLine::pass(
        "descent_regime",
        format!(
            "alpha = {:.3e} (cap {:.3e}), beta = {:.3e} (cap {:.3e})",
            config.alpha, sheet.steps.alpha_max_exact, config.beta, sheet.steps.beta_max
        ),
    ));
    let trace = run(&problem, &graph, &config).expect("run");
    let phis: Vec<f64> = trace.records.iter().map(|r| r.phi.unwrap()).collect();
    let mut worst = f64::NEG_INFINITY;
    for w in phis.windows(2) {
        worst = worst.max((w[1] - w[0]) / (1.0 + w[0].abs()));
    }
    lines.push(CheckLine::of(
        "phi_nonincreasing",
        worst <= 1e-9,
        format!("max relative increase = {worst:.3e} over {} rounds", phis.len()),
    ));
    lines
}

/// Best-iterate O(1/r) rate on a convex quadratic: log-log slope of
/// `min_{t<=r}(residue + infeasibility)` against r.
fn suite_rate() -> Vec<CheckLine> {
    let problem = build_quadratic_instance(3, 4, 3, 3, 1.0).unwrap();
    let graph = Graph::cycle(4).unwrap();
    let mut config = SolverConfig::new(Mode::ExactPdc);
    config.p = 2.0;
    config.rho = 1.0;
    config.max_rounds = 1000;
    config.alpha = 0.1;
    config.beta = 1.0;
    let trace = run(&problem, &graph, &config).expect("run");

    let (slope, residual) = best_iterate_slope(
        &trace
            .records
            .iter()
            .map(|r| r.grad_residue + r.infeasibility)
            .collect::<Vec<_>>(),
        10,
        1000,
    );
    vec![CheckLine::of(
        "rate_slope",
        slope <= -0.75,
        format!("log-log slope = {slope:.4} (fit rms residual {residual:.3e}) over rounds 10..=1000"),
    )]
}

/// Least-squares slope of `log10(min_{t<=r} m_t)` against `log10 r` over
/// `r in [lo, hi]`, with the fit's RMS residual.
pub fn best_iterate_slope(metric: &[f64], lo: usize, hi: usize) -> (f64, f64) {
    let hi = hi.min(metric.len());
    let mut best = f64::INFINITY;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, &m) in metric.iter().enumerate().take(hi) {
        let r = idx + 1;
        best = best.min(m);
        if r >= lo {
            xs.push((r as f64).log10());
            ys.push(best.max(1e-300).log10());
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}
