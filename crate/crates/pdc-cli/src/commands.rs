//! Command implementations: build the experiment, execute seeded repeats,
//! and write traces, mean traces, summaries, constant sheets, and spectra.
//!
//! All numeric output goes through Rust's shortest round-trip float
//! formatting, so every CSV re-parses to the exact bits that were written
//! and identical (config, seed) pairs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use pdc_core::bounds::constant_sheet;
use pdc_core::engine::{run, IterationTrace, SolverConfig};
use pdc_core::graph::{spectral_summary, Graph, GraphMatrices, SpectralSummary};
use pdc_core::problem::CoupledProblem;

use crate::config::ExperimentConfig;
use crate::CliError;

/// An instance/graph/solver triple ready to execute.
pub struct PreparedExperiment {
    pub problem: CoupledProblem,
    pub graph: Graph,
    pub solver: SolverConfig,
}

/// Builds the problem and graph described by a config.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment, CliError> {
    let graph = config.graph.build(config.instance.n_agents())?;
    let problem = config.instance.build(&graph)?;
    Ok(PreparedExperiment {
        problem,
        graph,
        solver: config.solver.to_config(),
    })
}

/// One row of the per-round average across repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRow {
    pub round: usize,
    pub grad_residue: f64,
    pub infeasibility: f64,
}

/// Runs `repeats` independently seeded copies (seed, seed+1, …), in
/// parallel across repeats. Any engine failure aborts the batch.
pub fn run_repeats(
    problem: &CoupledProblem,
    graph: &Graph,
    solver: &SolverConfig,
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<IterationTrace>, CliError> {
    (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut cfg = solver.clone();
            cfg.seed = base_seed + r as u64;
            run(problem, graph, &cfg).map_err(|e| CliError::Solver(e.to_string()))
        })
        .collect()
}

/// Per-round arithmetic mean across the traces; round r averages over the
/// runs that reached it (early-stopped runs drop out of later rows).
pub fn mean_rows(traces: &[IterationTrace]) -> Vec<MeanRow> {
    let longest = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    (0..longest)
        .map(|idx| {
            let rows: Vec<_> = traces.iter().filter_map(|t| t.records.get(idx)).collect();
            let k = rows.len() as f64;
            MeanRow {
                round: rows[0].round,
                grad_residue: rows.iter().map(|r| r.grad_residue).sum::<f64>() / k,
                infeasibility: rows.iter().map(|r| r.infeasibility).sum::<f64>() / k,
            }
        })
        .collect()
}

/// Serializes mean rows as `round,mean_grad_residue,mean_infeasibility`.
pub fn mean_rows_to_csv(rows: &[MeanRow]) -> String {
    let mut out = String::from("round,mean_grad_residue,mean_infeasibility\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.round, r.grad_residue, r.infeasibility);
    }
    out
}

/// Executes the configured repeats, writing per-run traces
/// (`trace_<r>.csv`), the mean trace (`mean_trace.csv`), and a JSON summary
/// (`summary.json`) into `out_dir`. Returns the mean rows for reuse.
pub fn cmd_run(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<MeanRow>, CliError> {
    let exp = prepare(config)?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let traces = run_repeats(&exp.problem, &exp.graph, &exp.solver, config.repeats, config.seed)?;
    let wall = started.elapsed().as_secs_f64();

    for (r, trace) in traces.iter().enumerate() {
        std::fs::write(out_dir.join(format!("trace_{r}.csv")), trace.to_csv())?;
    }
    let mean = mean_rows(&traces);
    std::fs::write(out_dir.join("mean_trace.csv"), mean_rows_to_csv(&mean))?;

    let runs: Vec<serde_json::Value> = traces
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let last = t.records.last();
            serde_json::json!({
                "seed": config.seed + r as u64,
                "rounds": t.records.len(),
                "final_grad_residue": last.map(|l| l.grad_residue),
                "final_infeasibility": last.map(|l| l.infeasibility),
                "locality_violations": t.locality_violations,
                "subsolves_total": t.subsolves_total,
                "subsolves_stopped_by_tol": t.subsolves_stopped_by_tol,
                "subsolver_budget_hits": t.subsolver_budget_hits,
            })
        })
        .collect();
    let finals = mean.last();
    let summary = serde_json::json!({
        "repeats": config.repeats,
        "wall_time_s": wall,
        "mean_final_grad_residue": finals.map(|f| f.grad_residue),
        "mean_final_infeasibility": finals.map(|f| f.infeasibility),
        "runs": runs,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(mean)
}

/// Runs `cmd_run` once per sweep value (value applied to the swept solver
/// parameter; traces land in `<param>_<value>/`), then writes the
/// plot-ready comparison CSV `sweep.csv`:
/// `param_value, round, mean_grad_residue, mean_infeasibility`.
pub fn cmd_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep requires a [sweep] section".into()))?;
    // Fail fast on parameter/mode mismatches before any run starts.
    let mut probe = config.solver.to_config();
    for &v in &sweep.values {
        sweep.param.apply(&mut probe, v)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let mut comparison = String::from("param_value,round,mean_grad_residue,mean_infeasibility\n");
    for &value in &sweep.values {
        let mut point = config.clone();
        point.sweep = None;
        // Re-apply onto a fresh config inside cmd_run's prepare().
        let mut solver = point.solver.clone();
        match sweep.param {
            crate::config::SweepParam::Alpha => solver.alpha = Some(value),
            crate::config::SweepParam::Beta => solver.beta = Some(value),
            crate::config::SweepParam::P => solver.p = Some(value),
            crate::config::SweepParam::Rho => solver.rho = Some(value),
            crate::config::SweepParam::Zeta => solver.zeta = Some(value),
        }
        point.solver = solver;
        let sub = out_dir.join(format!("{}_{}", sweep.param.name(), value));
        let mean = cmd_run(&point, &sub)?;
        for row in &mean {
            let _ = writeln!(
                comparison,
                "{},{},{},{}",
                value, row.round, row.grad_residue, row.infeasibility
            );
        }
    }
    std::fs::write(out_dir.join("sweep.csv"), comparison)?;
    Ok(())
}

/// Computes the full constant sheet for the configured instance and solver
/// parameters; returns the text rendering and the JSON document.
pub fn cmd_bounds(config: &ExperimentConfig) -> Result<(String, String), CliError> {
    let exp = prepare(config)?;
    let matrices = GraphMatrices::derive(&exp.graph, exp.problem.m_constraints());
    let sheet = constant_sheet(&exp.problem, &matrices, &exp.solver)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let json = serde_json::to_string_pretty(&sheet).expect("sheet serializes");
    Ok((sheet.to_text(), json))
}

/// Computes the spectral summary of the configured graph; returns the text
/// rendering and the JSON document.
pub fn cmd_spectra(config: &ExperimentConfig) -> Result<(String, String), CliError> {
    let graph = config.graph.build(config.instance.n_agents())?;
    let matrices = GraphMatrices::derive(&graph, 1);
    let s: SpectralSummary = spectral_summary(&matrices);
    let text = format!(
        "n_agents = {}\nn_edges = {}\nconnected = {}\nlambda_max_plus = {}\nsigma_min_minus = {}\nsigma_max_minus = {}\n",
        graph.n_agents(),
        graph.n_edges(),
        s.connected,
        s.lambda_max_plus,
        s.sigma_min_minus,
        s.sigma_max_minus
    );
    let json = serde_json::to_string_pretty(&s).expect("summary serializes");
    Ok((text, json))
}
