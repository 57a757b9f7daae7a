//! Natural-gradient variational Bayes without matrix inversion.
//!
//! The inverse Fisher information is tracked directly with rank-one
//! Sherman–Morrison updates fed by score draws, so natural-gradient steps
//! cost a matrix-vector product. [`optim`] provides plain stochastic gradient
//! ascent, exact natural gradient, the inversion-free variant and its
//! iterate-averaged form; [`harness`] drives seeded experiments and writes
//! CSV traces.

pub mod elbo;
pub mod error;
pub mod families;
pub mod fisher;
pub mod harness;
pub mod models;
pub mod optim;
pub mod rng;
pub mod specfun;
pub mod trace;

pub use nalgebra;

pub use error::{Error, Result};
pub use families::Family;
pub use fisher::{Capacity, FisherConfig, FisherInverseState, FisherMode};
pub use models::{Dataset, Model};
pub use optim::{run, OptimizerConfig, OptimizerKind, RunOutcome};
pub use trace::TraceRecord;
