//! Monte Carlo estimation of the solution and spatial gradient of linear
//! parabolic problems with a Neumann boundary condition on convex domains.
//!
//! The value `u(t,x) = E f(X_t)` is estimated from a reflecting diffusion,
//! and the gradient `∂_i u(t,x) = E ∇f(X_t)·J_t e_i` from its Jacobian
//! process, which evolves like the free derivative flow inside the domain
//! and loses its normal component at every boundary contact.
//!
//! Two discretizations are provided:
//!
//! * [`penalized`]: the domain constraint is replaced by a restoring drift
//!   `-n β₀(x)` and the Jacobian is differentiated pathwise.
//! * [`reflected`]: a projection scheme with discrete boundary local time
//!   and tangential projection of the Jacobian at contacts.
//!
//! [`oracle`] carries independent reference solutions (closed forms, grid
//! solvers, finite differences) used to validate both.
//!
//! The crate is `no_std` and only needs `alloc`. Parallel execution is
//! pluggable through [`executor::PathExecutor`].
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimator;
pub mod executor;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod penalized;
pub mod reflected;
pub mod stats;

mod kernel;
mod math;

pub use error::{Error, Result};

pub use estimator::{GradientEstimate, Problem, Scheme, ValueEstimate};
pub use executor::{PathExecutor, Sequential};
pub use geometry::{BoundaryFrame, Domain, Shape};
pub use model::{CoefficientField, InitialCondition};
pub use noise::NoiseStream;
pub use penalized::{PenalizedPathState, PenalizedScheme};
pub use reflected::{JumpMode, ReflectedPathRecord, ReflectedScheme, ReflectedState};
