//! Multi-type birth-death processes with mean-field interactions.
//!
//! The death rate of every particle carries a term `W r`, where `r` is the
//! expected state of the population. The crate computes `r` as a
//! self-consistent field ([`scf`]), its steady states, the law of a single
//! lineage through the truncated forward equation ([`master`]), finite
//! ensembles by exact simulation ([`ensemble`]) and likelihoods of sampled
//! trees ([`phylo`]).
//!
//! ```
//! use mfbd_core::{presets, solve_scf, ScfConfig};
//!
//! let spec = presets::logistic();
//! let sol = solve_scf(&spec, 20.0, &ScfConfig::default()).unwrap();
//! assert!((sol.field.terminal()[0] - 100.0).abs() < 1e-3);
//! ```

pub mod ensemble;
pub mod export;
pub mod master;
pub mod model;
pub mod ode;
pub mod phylo;
pub mod presets;
pub mod quad;
pub mod scf;

pub use ensemble::{convergence_study, simulate, simulate_general, EnsembleError, EnsembleTrace, Initial, SimConfig};
pub use master::{solve_master, DistributionTrajectory, MasterError, MasterOptions, TruncatedLattice};
pub use model::{ModelError, ModelSpec, SamplingSpec};
pub use ode::{OdeError, Tolerances};
pub use phylo::{log_likelihood, parse_tree, write_tree, LoglikOptions, PhyloError, PhyloTree};
pub use scf::{
    solve_moment_direct, solve_scf, steady_states, FieldTrajectory, ScfConfig, ScfError, ScfSolution, SteadyStates,
};
