//! Optimal control of Allen-Cahn phase-field systems on structured grids.
//!
//! The crate provides implicit and semi-implicit forward solvers, their exact
//! discrete adjoints and second-order sensitivities, a reduced-space
//! trust-region Newton method with Steihaug-cg, and a penalization homotopy
//! for the multi-obstacle potential.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod error;
pub mod forward;
pub mod grid;
pub mod krylov;
pub mod mpec;
pub mod potentials;
pub mod reduced;
pub mod scenario;
pub mod trn;


pub use adjoint::{AdjointTrajectory, DesiredState, Targets, Weights};
pub use error::{Error, Result};
pub use forward::{solve_forward, AllenCahn, ControlField, PhaseTrajectory, SolverOptions, StepScheme};
pub use grid::{Field, SpatialGrid, TimeGrid};
pub use potentials::Potential;
pub use reduced::ReducedProblem;
pub use trn::{StepStatus, TrustRegionState};
