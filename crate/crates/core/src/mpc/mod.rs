//! Condensed MPC problem construction for the sparse piecewise-affine
//! control parametrization.

mod condense;
pub mod file;
mod model;
mod param;

pub use condense::{condense, FormulationOptions, MpcBounds, MpcFormulation, MpcWeights};
pub use model::{predict, LtiModel, OperatingPoint, StepMatrices};
pub use param::ControlParametrization;
