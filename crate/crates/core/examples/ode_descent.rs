//! The ODE solver on a 1-D penalized problem: the cost trace never rises.

use nalgebra::{dmatrix, dvector};
use rtmpc::ode::{self, OdeSolverConfig};
use rtmpc::qp::{PenaltyConfig, QpProblem};

fn main() -> rtmpc::Result<()> {
    // (z − 2)² with z ≤ 1 penalized at α = 100: 2z − 4 + 200(z − 1) = 0 at 102/101
    let prob = QpProblem::new(
        dmatrix![1.0],
        dvector![-4.0],
        dmatrix![1.0],
        dvector![1.0],
        dvector![f64::NEG_INFINITY],
        dvector![f64::INFINITY],
    )?
    .with_constant(4.0);
    let cfg = OdeSolverConfig {
        penalty: PenaltyConfig::new(100.0, 2.0)?,
        ..Default::default()
    };
    let state = ode::run(&prob, &cfg, &dvector![-3.0], 40)?;
    for (k, c) in state.cost_trace.iter().enumerate().step_by(5) {
        println!("{k:3}  J = {c:.10}");
    }
    println!("z = {:.10}  (102/101 = {:.10})", state.iterate[0], 102.0 / 101.0);
    Ok(())
}
