//! Numerical laboratory for semi-discrete optimal matching on the flat
//! 2-torus.
//!
//! The crate covers torus geometry and sampling ([`torus`]), the periodic
//! heat kernel and its regularised Green's function ([`heat`]), the
//! linearisation field of an empirical measure ([`ansatz`]), exact and
//! certified approximate transport solvers ([`transport`]), trajectory
//! functionals along transport plans ([`trajectory`]) and the Monte Carlo
//! drivers that tie them together ([`experiments`]).

pub mod ansatz;
pub mod error;
pub mod experiments;
pub mod heat;
pub mod numeric;
pub mod torus;
pub mod trajectory;
pub mod transport;

pub use ansatz::{AnsatzField, GradientField, GridField, PotentialField};
pub use error::{Error, Result};
pub use experiments::{Experiment, ExperimentConfig, ExperimentReport, OutputFormat, ReplicateRecord, SummaryStats};
pub use heat::HeatEvaluator;
pub use torus::{Displacement, SampleSet, TorusPoint};
pub use trajectory::QuadratureRule;
pub use transport::{Coupling, DualPotentials, SolveMethod, TransportResult};
