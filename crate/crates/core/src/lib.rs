//! Simulator for decentralized finite-sum optimization with gradient
//! tracking and a probabilistic variance-reduction anchor (GT-VR), plus the
//! DSGD, DSGT and GT-SAGA baselines.
//!
//! Data flows `ingest -> problem`, `graph -> algorithms -> metrics`; `theory`
//! evaluates the closed-form step-size and contraction constants and `cli`
//! wires everything to config files.

pub mod algorithms;
pub mod cli;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod problem;
pub mod rng;
pub mod stacked;
pub mod theory;

pub use algorithms::{run_experiment, run_experiment_from, Algorithm, RunConfig, SwarmState, Trace};
pub use error::{Error, Result};
pub use graph::{build_topology, spectral_radius_rho, MixingMatrix, Topology, TopologyKind};
pub use metrics::TraceRow;
pub use problem::{FiniteSumProblem, LogisticProblem, QuadraticProblem};
pub use stacked::Stacked;
