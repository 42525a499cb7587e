//! Augmented cost of a small constrained QP and a KKT check at its optimum.

use nalgebra::{dmatrix, dvector};
use rtmpc::qp::{augmented_cost, augmented_gradient, kkt_report, PenaltyConfig, QpProblem};

fn main() -> rtmpc::Result<()> {
    // min z² subject to z ≥ 1 written as −z ≤ −1
    let prob = QpProblem::new(
        dmatrix![1.0],
        dvector![0.0],
        dmatrix![-1.0],
        dvector![-1.0],
        dvector![f64::NEG_INFINITY],
        dvector![f64::INFINITY],
    )?;
    let pen = PenaltyConfig::new(100.0, 2.0)?;
    for z in [0.0, 0.5, 1.0, 2.0] {
        let zv = dvector![z];
        println!(
            "z = {z:4}  J = {:8.3}  dJ/dz = {:8.3}",
            augmented_cost(&prob, &pen, &zv, 1.0)?,
            augmented_gradient(&prob, &pen, &zv)?[0]
        );
    }
    // optimum z = 1: 2z − λ = 0 gives λ = 2 on the polyhedral row
    let rep = kkt_report(&prob, &dvector![1.0], &dvector![2.0, 0.0, 0.0])?;
    println!("KKT residual at z = 1: {:e}", rep.max_residual());
    Ok(())
}
