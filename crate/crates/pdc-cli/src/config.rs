//! Experiment configuration: what to solve, on which graph, with which
//! solver parameters, how many seeded repeats, and (optionally) which
//! parameter to sweep.
//!
//! Two on-disk formats are accepted and distinguished by the first
//! non-whitespace byte:
//!
//! - JSON (`{ "instance": { "kind": "quadratic", ... }, ... }`);
//! - flat key-value text with dotted sections:
//!
//! ```text
//! # lines starting with '#' are comments
//! instance.kind = vertical_lr
//! instance.n_agents = 25
//! graph.kind = random
//! graph.edge_prob = 0.3
//! solver.alpha = 0.01
//! sweep.param = rho
//! sweep.values = 0.01, 0.1, 1, 10
//! repeats = 10
//! seed = 0
//! out = results
//! ```
//!
//! The flat form is rewritten into the same JSON tree, so both formats
//! accept exactly the same keys.

use serde::{Deserialize, Serialize};

use pdc_core::engine::{Mode, SolverConfig, YInit};
use pdc_core::graph::Graph;
use pdc_core::problem::{
    build_consensus_instance, build_quadratic_instance, build_vertical_lr, build_vertical_nn,
    CoupledProblem, VerticalDataset,
};

use crate::CliError;

fn d_one() -> usize {
    1
}

/// A full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Number of independently seeded runs to average over.
    #[serde(default = "d_one")]
    pub repeats: usize,
    /// Base seed; repeat r runs with seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    /// Output directory (also settable with `--out`).
    #[serde(default)]
    pub out: Option<String>,
}

/// Which problem instance to build.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// Random strongly/weakly convex quadratics with a shared dense
    /// coupling constraint.
    Quadratic {
        #[serde(default = "dq_agents")]
        n_agents: usize,
        #[serde(default = "dq_local")]
        n_local: usize,
        #[serde(default = "dq_constraints")]
        m_constraints: usize,
        /// Smallest objective eigenvalue (negative = weakly convex).
        #[serde(default = "dq_shift")]
        convexity_shift: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Consensus over random quadratics: the coupling is the expanded
    /// edge-incidence operator and q = 0.
    Consensus {
        #[serde(default = "dq_agents")]
        n_agents: usize,
        #[serde(default = "dq_local")]
        n_local: usize,
        #[serde(default = "dq_shift")]
        convexity_shift: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Feature-partitioned logistic regression with the bounded non-convex
    /// regularizer; synthetic two-class data unless files are given.
    VerticalLr {
        #[serde(default = "dlr_agents")]
        n_agents: usize,
        #[serde(default = "dlr_local")]
        n_per_agent: usize,
        #[serde(default = "dlr_samples")]
        m_samples: usize,
        #[serde(default = "dlr_lambda")]
        lambda: f64,
        #[serde(default = "dlr_xi")]
        xi: f64,
        /// Which agent additionally owns the per-sample margins.
        #[serde(default)]
        aux_agent: usize,
        #[serde(default)]
        seed: u64,
        /// Optional dataset CSV (features + labels); defaults to synthetic.
        #[serde(default)]
        data_file: Option<String>,
        /// Feature partition CSV, required with `data_file`.
        #[serde(default)]
        partition_file: Option<String>,
    },
    /// Feature-partitioned one-hidden-layer network head (outside the
    /// smoothness assumption; curvature is sampled, not certified).
    VerticalNn {
        #[serde(default = "dnn_agents")]
        n_agents: usize,
        #[serde(default = "dnn_local")]
        n_per_agent: usize,
        #[serde(default = "dnn_samples")]
        m_samples: usize,
        #[serde(default = "dnn_classes")]
        n_classes: usize,
        #[serde(default = "dnn_hidden")]
        hidden: usize,
        #[serde(default)]
        aux_agent: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn dq_agents() -> usize {
    6
}
fn dq_local() -> usize {
    4
}
fn dq_constraints() -> usize {
    4
}
fn dq_shift() -> f64 {
    1.0
}
fn dlr_agents() -> usize {
    25
}
fn dlr_local() -> usize {
    20
}
fn dlr_samples() -> usize {
    100
}
fn dlr_lambda() -> f64 {
    0.01
}
fn dlr_xi() -> f64 {
    0.5
}
fn dnn_agents() -> usize {
    8
}
fn dnn_local() -> usize {
    8
}
fn dnn_samples() -> usize {
    200
}
fn dnn_classes() -> usize {
    4
}
fn dnn_hidden() -> usize {
    8
}

impl InstanceSpec {
    /// Number of agents this instance will have.
    pub fn n_agents(&self) -> usize {
        match *self {
            InstanceSpec::Quadratic { n_agents, .. }
            | InstanceSpec::Consensus { n_agents, .. }
            | InstanceSpec::VerticalLr { n_agents, .. }
            | InstanceSpec::VerticalNn { n_agents, .. } => n_agents,
        }
    }

    /// Builds the coupled problem. Consensus instances need the graph (their
    /// coupling is the edge-incidence operator).
    pub fn build(&self, graph: &Graph) -> Result<CoupledProblem, CliError> {
        let cfg_err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        match self {
            InstanceSpec::Quadratic {
                n_agents,
                n_local,
                m_constraints,
                convexity_shift,
                seed,
            } => build_quadratic_instance(*seed, *n_agents, *n_local, *m_constraints, *convexity_shift)
                .map_err(|e| cfg_err(&e)),
            InstanceSpec::Consensus {
                n_agents,
                n_local,
                convexity_shift,
                seed,
            } => {
                let donor =
                    build_quadratic_instance(*seed, *n_agents, *n_local, 1, *convexity_shift)
                        .map_err(|e| cfg_err(&e))?;
                build_consensus_instance(donor.objectives, graph).map_err(|e| cfg_err(&e))
            }
            InstanceSpec::VerticalLr {
                n_agents,
                n_per_agent,
                m_samples,
                lambda,
                xi,
                aux_agent,
                seed,
                data_file,
                partition_file,
            } => {
                let data = match (data_file, partition_file) {
                    (Some(df), Some(pf)) => {
                        let d = std::fs::read_to_string(df)?;
                        let p = std::fs::read_to_string(pf)?;
                        VerticalDataset::from_csv(&d, &p).map_err(|e| cfg_err(&e))?
                    }
                    (None, None) => {
                        VerticalDataset::synthetic_binary(*seed, *n_agents, *n_per_agent, *m_samples)
                            .map_err(|e| cfg_err(&e))?
                    }
                    _ => {
                        return Err(CliError::Config(
                            "data_file and partition_file must be given together".into(),
                        ))
                    }
                };
                build_vertical_lr(&data, *lambda, *xi, *aux_agent).map_err(|e| cfg_err(&e))
            }
            InstanceSpec::VerticalNn {
                n_agents,
                n_per_agent,
                m_samples,
                n_classes,
                hidden,
                aux_agent,
                seed,
            } => {
                let data = VerticalDataset::synthetic_one_hot(
                    *seed,
                    *n_agents,
                    *n_per_agent,
                    *m_samples,
                    *n_classes,
                )
                .map_err(|e| cfg_err(&e))?;
                build_vertical_nn(&data, *hidden, *aux_agent, *seed).map_err(|e| cfg_err(&e))
            }
        }
    }
}

/// Which communication graph the agents use.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Cycle over all agents.
    Cycle,
    /// Connected Erdős–Rényi-style graph (augmented to connectivity).
    Random {
        #[serde(default = "dg_prob")]
        edge_prob: f64,
        #[serde(default = "d_one_u64")]
        seed: u64,
    },
    /// Explicit edge list loaded from a file (see `Graph::from_edge_list`).
    EdgeList { path: String },
}

fn dg_prob() -> f64 {
    0.3
}
fn d_one_u64() -> u64 {
    1
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Cycle
    }
}

impl GraphSpec {
    /// Builds the graph for `n_agents` agents.
    pub fn build(&self, n_agents: usize) -> Result<Graph, CliError> {
        let cfg_err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        match self {
            GraphSpec::Cycle => Graph::cycle(n_agents).map_err(|e| cfg_err(&e)),
            GraphSpec::Random { edge_prob, seed } => {
                Graph::random_connected(n_agents, *edge_prob, *seed).map_err(|e| cfg_err(&e))
            }
            GraphSpec::EdgeList { path } => {
                let text = std::fs::read_to_string(path)?;
                let g = Graph::from_edge_list(&text).map_err(|e| cfg_err(&e))?;
                if g.n_agents() != n_agents {
                    return Err(CliError::Config(format!(
                        "edge list has {} agents but the instance has {}",
                        g.n_agents(),
                        n_agents
                    )));
                }
                Ok(g)
            }
        }
    }
}

/// Solver parameters with everything optional; unset fields take the
/// engine defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub mode: Option<Mode>,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub zeta: Option<f64>,
    pub subsolver_tol: Option<f64>,
    pub max_inner: Option<usize>,
    pub max_rounds: Option<usize>,
    pub record_phi: Option<bool>,
    pub y_init: Option<YInit>,
    pub tol_residue: Option<f64>,
    pub tol_infeasibility: Option<f64>,
    pub threads: Option<usize>,
}

impl SolverSpec {
    /// Materializes a full solver config, filling gaps with defaults.
    pub fn to_config(&self) -> SolverConfig {
        let mut c = SolverConfig::new(self.mode.unwrap_or(Mode::ExactPdc));
        if let Some(v) = self.p {
            c.p = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.rho {
            c.rho = v;
        }
        if self.zeta.is_some() {
            c.zeta = self.zeta;
        }
        if let Some(v) = self.subsolver_tol {
            c.subsolver_tol = v;
        }
        if let Some(v) = self.max_inner {
            c.max_inner = v;
        }
        if let Some(v) = self.max_rounds {
            c.max_rounds = v;
        }
        if let Some(v) = self.record_phi {
            c.record_phi = v;
        }
        if let Some(v) = self.y_init {
            c.y_init = v;
        }
        if let Some(v) = self.tol_residue {
            c.tol_residue = v;
        }
        if let Some(v) = self.tol_infeasibility {
            c.tol_infeasibility = v;
        }
        if let Some(v) = self.threads {
            c.threads = v;
        }
        c
    }
}

/// Parameters the sweep command may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    P,
    Rho,
    Zeta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::P => "p",
            SweepParam::Rho => "rho",
            SweepParam::Zeta => "zeta",
        }
    }

    /// Applies the value to a solver config.
    pub fn apply(&self, config: &mut SolverConfig, value: f64) -> Result<(), CliError> {
        match self {
            SweepParam::Alpha => config.alpha = value,
            SweepParam::Beta => config.beta = value,
            SweepParam::P => config.p = value,
            SweepParam::Rho => config.rho = value,
            SweepParam::Zeta => {
                if config.mode != Mode::InexactIpdc {
                    return Err(CliError::Config(
                        "sweeping zeta requires solver.mode = inexact_ipdc".into(),
                    ));
                }
                config.zeta = Some(value);
            }
        }
        Ok(())
    }
}

/// One-parameter sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
    /// Parses either format, then validates.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str::<serde_json::Value>(text)
                .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?
        } else {
            flat_to_json(text)?
        };
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.repeats < 1 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep.values must be nonempty".into()));
            }
            if sweep.values.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::Config("sweep values must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Converts flat `a.b.c = value` lines into the equivalent JSON tree.
/// Values parse as bool, then number, then bare string; comma-separated
/// values become arrays.
fn flat_to_json(text: &str) -> Result<serde_json::Value, CliError> {
    use serde_json::{Map, Value};
    let mut root = Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(CliError::Config(format!(
                "line {}: empty key or value",
                lineno + 1
            )));
        }
        // `values` keys are always lists, even with a single entry.
        let parsed = if value.contains(',') || key.ends_with(".values") {
            Value::Array(value.split(',').map(|v| scalar_to_json(v.trim())).collect())
        } else {
            scalar_to_json(value)
        };
        // Walk/create the nested objects along the dotted path.
        let mut cursor = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| {
                    CliError::Config(format!("key `{key}` conflicts with an earlier scalar"))
                })?;
        }
        cursor.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    Ok(serde_json::Value::Object(root))
}

fn scalar_to_json(s: &str) -> serde_json::Value {
    use serde_json::Value;
    match s {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(u) = s.parse::<u64>() {
        return Value::Number(u.into());
    }
    if let Ok(i) = s.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Ok(f) = s.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return Value::Number(n);
        }
    }
    Value::String(s.trim_matches('"').to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_json_forms_agree() {
        let flat = "\
# comment
instance.kind = quadratic
instance.n_agents = 5
instance.seed = 3
graph.kind = random
graph.edge_prob = 0.4
solver.alpha = 0.02
solver.mode = exact_pdc
sweep.param = rho
sweep.values = 0.01, 0.1, 1
repeats = 3
seed = 9
out = results
";
        let json = r#"{
            "instance": {"kind": "quadratic", "n_agents": 5, "seed": 3},
            "graph": {"kind": "random", "edge_prob": 0.4},
            "solver": {"alpha": 0.02, "mode": "exact_pdc"},
            "sweep": {"param": "rho", "values": [0.01, 0.1, 1]},
            "repeats": 3,
            "seed": 9,
            "out": "results"
        }"#;
        let a = ExperimentConfig::parse(flat).unwrap();
        let b = ExperimentConfig::parse(json).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.repeats, 3);
        assert_eq!(a.instance.n_agents(), 5);
        assert_eq!(a.sweep.unwrap().values, vec![0.01, 0.1, 1.0]);
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse("instance.kind = vertical_lr\n").unwrap();
        assert_eq!(cfg.instance.n_agents(), 25);
        assert_eq!(cfg.repeats, 1);
        let solver = cfg.solver.to_config();
        assert_eq!(solver.max_rounds, 1000);
        assert!(matches!(cfg.graph, GraphSpec::Cycle));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("instance.kind = quadratic\ninstance.bogus = 1\n")
            .unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn repeats_and_sweep_validation() {
        let err =
            ExperimentConfig::parse("instance.kind = quadratic\nrepeats = 0\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err = ExperimentConfig::parse(
            "instance.kind = quadratic\nsweep.param = alpha\nsweep.values = -1, 2\n",
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn zeta_sweep_requires_inexact_mode() {
        let cfg = ExperimentConfig::parse(
            "instance.kind = quadratic\nsweep.param = zeta\nsweep.values = 0.1\n",
        )
        .unwrap();
        let mut solver = cfg.solver.to_config();
        let err = cfg
            .sweep
            .unwrap()
            .param
            .apply(&mut solver, 0.1)
            .unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn builds_each_instance_kind_at_tiny_scale() {
        for text in [
            "instance.kind = quadratic\ninstance.n_agents = 3\ninstance.n_local = 2\ninstance.m_constraints = 2\n",
            "instance.kind = consensus\ninstance.n_agents = 3\ninstance.n_local = 2\n",
            "instance.kind = vertical_lr\ninstance.n_agents = 3\ninstance.n_per_agent = 2\ninstance.m_samples = 5\n",
            "instance.kind = vertical_nn\ninstance.n_agents = 3\ninstance.n_per_agent = 2\ninstance.m_samples = 6\ninstance.n_classes = 2\ninstance.hidden = 2\n",
        ] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let graph = cfg.graph.build(cfg.instance.n_agents()).unwrap();
            let problem = cfg.instance.build(&graph).unwrap();
            assert_eq!(problem.n_agents(), 3, "{text}");
        }
    }
}
