//! Iteration-limited model predictive control with an adaptive updating
//! period: condensed QP construction, a monotonic ODE-based solver, a
//! hot-started primal active-set solver, the period-adaptation rule, a
//! closed-loop simulator with a compute-budget model, and sweep metrics.

pub mod active_set;
pub mod adapt;
pub mod bench;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mpc;
pub mod ode;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
