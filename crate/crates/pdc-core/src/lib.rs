//! Proximal dual consensus (PDC) and inexact PDC (IPDC) solvers for
//! decentralized optimization with linearly coupled constraints.
//!
//! The library targets problems of the form
//!
//! ```text
//! minimize   Σᵢ fᵢ(xᵢ)       over agents i = 1..N
//! subject to Σᵢ Bᵢ xᵢ = q
//! ```
//!
//! where each smooth (possibly non-convex) `fᵢ`, coupling block `Bᵢ`, and
//! variable block `xᵢ` lives on one node of a connected undirected agent
//! graph. Agents exchange only their local dual copies `yᵢ` with graph
//! neighbors; the solver simulates this as synchronous message-passing
//! rounds.
//!
//! # Modules
//!
//! - [`graph`]: agent topologies, incidence/Laplacian matrices, spectra.
//! - [`problem`]: objective and instance builders (quadratic test problems,
//!   consensus finite-sum, vertical logistic regression, toy vertical NN),
//!   gradient checking, and a centralized KKT oracle.
//! - [`engine`]: the synchronous-round PDC/IPDC iteration with the FISTA
//!   inner solver, locality-guarded neighbor access, and trace recording.
//! - [`diagnostics`]: KKT residuals, the proximal solution map, and the
//!   potential-function evaluator used as a descent certificate.
//! - [`bounds`]: every closed-form constant of the convergence theory
//!   (perturbation/error constants, Hoffman estimates, admissible step
//!   sizes), so experiments can be placed inside or outside the proven
//!   parameter regime.

pub mod bounds;
pub mod diagnostics;
pub mod engine;
pub mod graph;
pub mod problem;

pub use graph::{Graph, GraphMatrices, SpectralSummary};
pub use problem::{CoupledProblem, LocalObjective, VerticalDataset};
