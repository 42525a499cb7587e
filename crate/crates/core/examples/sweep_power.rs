//! Both solvers across normalized computing power on the step segment.

use rtmpc::bench::{benchmark_controller, benchmark_formulation, benchmark_plant, scenario_segments, PlantSpec, POWER_SEGMENT};
use rtmpc::metrics::sweep_power;
use rtmpc::sim::{ComputeBudget, PlantSim, SolverKind};

fn main() -> rtmpc::Result<()> {
    let spec = PlantSpec::default();
    let (model, op) = benchmark_plant(&spec)?;
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100)?, SolverKind::Ode);
    let scenario = scenario_segments(spec.baseline_load, spec.seed).remove(POWER_SEGMENT);
    let r = sweep_power(&PlantSim::new(model), &ctrl, &scenario, &ComputeBudget::default(), &[0.25, 0.5, 1.0, 2.0, 4.0, 8.0])?;
    println!("{:>6} {:>10} {:>6} {:>12} {:>10}", "power", "solver", "iters", "closed-loop", "normalized");
    for row in &r.rows {
        println!(
            "{:6} {:>10} {:6} {:12.4e} {:10.4}",
            row.axis_value, row.mode, row.iterations, row.breakdown.closed_loop_total, row.normalized
        );
    }
    println!("crossover: {:?}", r.crossover);
    Ok(())
}
