//! Physics-informed graph neural reconfiguration of radial distribution grids.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: grid and scenario data model, file ingestion, radiality checks
//!   and dataset generation.
//! - [`flow`]: linearized DistFlow physics (objective, residuals, inequality
//!   vector) and the dependent-variable recovery chain.
//! - [`oracle`]: exact reconfiguration by radial-topology enumeration with a
//!   dense convex QP per topology.
//! - [`autodiff`]: a small dense reverse-mode tape, MLP blocks and Adam.
//! - [`model`]: gated message passing, local predictors, rounding, recovery
//!   and losses.
//! - [`train`]: training loop, committees, metrics and experiment harnesses.

pub mod autodiff;
pub mod error;
pub mod flow;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
