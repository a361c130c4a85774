//! Cross-module invariants of the synchronous-round protocol, plus
//! randomized structural properties of the graph and problem layers.

use nalgebra::DVector;
use proptest::prelude::*;

use pdc_core::engine::{run, IterationTrace, Mode, SolverConfig};
use pdc_core::graph::{split_blocks, stack_blocks, Graph, GraphMatrices};
use pdc_core::problem::build_quadratic_instance;

fn small_run(seed: u64, rounds: usize) -> (pdc_core::problem::CoupledProblem, Graph, SolverConfig) {
    let n = 4;
    let problem = build_quadratic_instance(seed, n, 3, 2, 1.0).unwrap();
    let graph = Graph::cycle(n).unwrap();
    let mut config = SolverConfig::new(Mode::ExactPdc);
    config.alpha = 0.05;
    config.seed = seed;
    config.max_rounds = rounds;
    (problem, graph, config)
}

/// The per-agent accumulator p equals the incidence-transposed shadow edge
/// multiplier at every round (checked at a ladder of horizons, since the
/// trajectory prefixes are deterministic).
#[test]
fn dual_accumulator_matches_edge_multiplier() {
    for rounds in [1usize, 2, 3, 5, 10, 25, 50, 100] {
        let (problem, graph, config) = small_run(9, rounds);
        let trace = run(&problem, &graph, &config).unwrap();
        let m = problem.m_constraints();
        // (A^T mu)_i = sum over incident edges with the signed orientation.
        let mut recon = vec![DVector::zeros(m); graph.n_agents()];
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            recon[i] += &trace.final_mu[e];
            recon[j] -= &trace.final_mu[e];
        }
        for (state, expect) in trace.final_states.iter().zip(&recon) {
            assert!(
                (&state.p - expect).amax() <= 1e-12,
                "p != A^T mu at horizon {rounds}"
            );
        }
    }
}

/// The dual accumulators sum to zero every round (drift from floating-point
/// accumulation stays below 1e-10).
#[test]
fn dual_accumulators_sum_to_zero() {
    for rounds in [1usize, 5, 20, 100, 500] {
        let (problem, graph, config) = small_run(4, rounds);
        let trace = run(&problem, &graph, &config).unwrap();
        let m = problem.m_constraints();
        let total = trace
            .final_states
            .iter()
            .fold(DVector::zeros(m), |acc, s| acc + &s.p);
        assert!(total.amax() <= 1e-10, "sum p drift {} at {rounds}", total.amax());
    }
}

/// On a convex instance every successive-difference diagnostic and the dual
/// consensus gap fall below 1e-7.
#[test]
fn successive_differences_vanish_on_convex_instances() {
    let (problem, graph, mut config) = small_run(12, 4000);
    config.subsolver_tol = 1e-10;
    let trace = run(&problem, &graph, &config).unwrap();
    let last = trace.records.last().unwrap();
    assert!(last.dx < 1e-7, "dx = {}", last.dx);
    assert!(last.dy < 1e-7, "dy = {}", last.dy);
    assert!(last.dz < 1e-7, "dz = {}", last.dz);
    assert!(last.consensus_gap < 1e-7, "gap = {}", last.consensus_gap);
}

proptest! {
    /// Edge lists round-trip through serialization for arbitrary connected
    /// random graphs.
    #[test]
    fn edge_list_round_trip(n in 2usize..12, prob in 0.05f64..0.95, seed in 0u64..500) {
        let graph = Graph::random_connected(n, prob, seed).unwrap();
        let listed = graph.to_edge_list();
        let back = Graph::from_edge_list(&listed).unwrap();
        prop_assert_eq!(graph.edges(), back.edges());
    }

    /// The signed and signless Laplacians always sum to twice the degree
    /// matrix, and their quadratic forms match the edge sums.
    #[test]
    fn laplacian_identities(n in 3usize..10, prob in 0.2f64..0.9, seed in 0u64..200) {
        let graph = Graph::random_connected(n, prob, seed).unwrap();
        let matrices = GraphMatrices::derive(&graph, 1);
        let lm = matrices.signed_laplacian();
        let lp = matrices.signless_laplacian();
        let two_d = 2.0 * matrices.degree();
        prop_assert!(((lm + lp) - two_d).amax() <= 1e-12);

        let mut rng_seed = seed.wrapping_mul(0x9E37_79B9);
        let v = DVector::from_fn(n, |i, _| {
            rng_seed = rng_seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64);
            ((rng_seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        });
        let minus_form = v.dot(&(matrices.signed_laplacian() * &v));
        let plus_form = v.dot(&(matrices.signless_laplacian() * &v));
        let edge_minus: f64 = graph.edges().iter().map(|&(i, j)| (v[i] - v[j]).powi(2)).sum();
        let edge_plus: f64 = graph.edges().iter().map(|&(i, j)| (v[i] + v[j]).powi(2)).sum();
        prop_assert!((minus_form - edge_minus).abs() <= 1e-9 * (1.0 + edge_minus.abs()));
        prop_assert!((plus_form - edge_plus).abs() <= 1e-9 * (1.0 + edge_plus.abs()));
    }

    /// Stacking and splitting block vectors are inverse operations.
    #[test]
    fn stack_split_round_trip(n in 1usize..8, m in 1usize..6, seed in 0u64..100) {
        let blocks: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_fn(m, |k, _| (seed as f64) + (i * m + k) as f64 * 0.37))
            .collect();
        let stacked = stack_blocks(&blocks);
        prop_assert_eq!(split_blocks(&stacked, n, m), blocks);
    }

    /// Trace CSV serialization round-trips every recorded float exactly
    /// (shortest round-trip formatting).
    #[test]
    fn trace_csv_round_trip(seed in 0u64..40, rounds in 1usize..12) {
        let (problem, graph, mut config) = small_run(seed, rounds);
        config.record_phi = true;
        let trace = run(&problem, &graph, &config).unwrap();
        let parsed = IterationTrace::records_from_csv(&trace.to_csv()).unwrap();
        prop_assert_eq!(parsed.len(), trace.records.len());
        for (a, b) in parsed.iter().zip(&trace.records) {
            prop_assert_eq!(a.round, b.round);
            prop_assert_eq!(a.grad_residue.to_bits(), b.grad_residue.to_bits());
            prop_assert_eq!(a.infeasibility.to_bits(), b.infeasibility.to_bits());
            prop_assert_eq!(a.consensus_gap.to_bits(), b.consensus_gap.to_bits());
            prop_assert_eq!(a.phi.map(f64::to_bits), b.phi.map(f64::to_bits));
        }
    }

    /// Gradient residue and infeasibility are invariant under relabeling the
    /// agents (the metrics are sums over agents and constraints).
    #[test]
    fn metrics_invariant_under_agent_relabeling(seed in 0u64..50) {
        use pdc_core::diagnostics::{gradient_residue, infeasibility};
        use pdc_core::problem::CoupledProblem;
        let problem = build_quadratic_instance(seed, 5, 3, 2, 1.0).unwrap();
        let mut rng_state = seed.wrapping_add(1);
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let xs: Vec<DVector<f64>> = problem
            .objectives
            .iter()
            .map(|o| DVector::from_fn(o.dim, |_, _| next()))
            .collect();
        let ys: Vec<DVector<f64>> = (0..5)
            .map(|_| DVector::from_fn(2, |_, _| next()))
            .collect();
        let base_residue = gradient_residue(&problem, &xs, &ys);
        let base_infeas = infeasibility(&problem, &xs);

        let perm = [2usize, 0, 4, 1, 3];
        let relabeled = CoupledProblem::new(
            perm.iter().map(|&i| problem.objectives[i].clone()).collect(),
            perm.iter().map(|&i| problem.coupling[i].clone()).collect(),
            problem.rhs.clone(),
        )
        .unwrap();
        let xs_p: Vec<DVector<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let ys_p: Vec<DVector<f64>> = perm.iter().map(|&i| ys[i].clone()).collect();
        let residue_p = gradient_residue(&relabeled, &xs_p, &ys_p);
        let infeas_p = infeasibility(&relabeled, &xs_p);
        prop_assert!((base_residue - residue_p).abs() <= 1e-12 * (1.0 + base_residue));
        prop_assert!((base_infeas - infeas_p).abs() <= 1e-12 * (1.0 + base_infeas));
    }
}
