//! Projection-based reduced order models of two canonical flow problems and
//! forward-sensitivity estimation of their eddy-viscosity closures.
//!
//! The pipeline is:
//!
//! 1. a full-order solver ([`burgers`] or [`vorticity`]) produces a
//!    [`SnapshotSet`](snapshots::SnapshotSet);
//! 2. [`pod`] extracts a mean field and an orthonormal basis;
//! 3. [`grom`] projects the governing equations onto that basis, keeping the
//!    eddy-viscosity operators separate so the closure can be changed cheaply;
//! 4. [`observations`] synthesises noisy measurements from the full-order truth;
//! 5. [`fsm`] propagates forward sensitivities through the RK4 map and corrects
//!    the eddy viscosity by weighted least squares until convergence;
//! 6. [`experiment`] wires everything together behind a config file.

pub mod burgers;
pub mod container;
pub mod error;
pub mod experiment;
pub mod fsm;
pub mod grom;
mod linalg;
pub mod observations;
pub mod pod;
pub mod snapshots;
pub mod vorticity;

pub use error::{Error, Result};
