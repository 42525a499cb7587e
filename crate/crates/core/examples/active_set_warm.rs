//! Cold and warm starts of the active-set solver, then a capped solve.

use nalgebra::{dmatrix, dvector};
use rtmpc::active_set::solve;
use rtmpc::qp::{kkt_report, QpProblem};

fn main() -> rtmpc::Result<()> {
    let prob = QpProblem::new(
        dmatrix![2.0, 0.5; 0.5, 1.0],
        dvector![-8.0, -6.0],
        dmatrix![1.0, 1.0; -1.0, 2.0],
        dvector![2.0, 2.0],
        dvector![0.0, 0.0],
        dvector![3.0, 3.0],
    )?;
    let cold = solve(&prob, None, &dvector![0.0, 0.0], 50)?;
    println!(
        "cold: z = {:?} {} after {} iterations, W = {}",
        cold.iterate.as_slice(),
        cold.status.as_str(),
        cold.iterations_used,
        cold.working_set
    );
    println!("KKT residual {:e}", kkt_report(&prob, &cold.iterate, &cold.multipliers)?.max_residual());

    let warm = solve(&prob, Some(&cold.working_set), &cold.iterate, 50)?;
    println!("warm: {} after {} iterations", warm.status.as_str(), warm.iterations_used);

    let capped = solve(&prob, None, &dvector![3.0, 0.0], 1)?;
    println!("capped at 1: z = {:?} {}", capped.iterate.as_slice(), capped.status.as_str());
    Ok(())
}
