//! Fixed updating periods against the adaptive rule on the six segments.

use rtmpc::adapt::AdaptationConfig;
use rtmpc::bench::{benchmark_controller, benchmark_formulation, benchmark_plant, scenario_segments, PlantSpec};
use rtmpc::metrics::{period_summary, sweep_period};
use rtmpc::sim::{ComputeBudget, PlantSim, SolverKind};

fn main() -> rtmpc::Result<()> {
    let spec = PlantSpec::default();
    let (model, op) = benchmark_plant(&spec)?;
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100)?, SolverKind::Ode);
    let segments = scenario_segments(spec.baseline_load, spec.seed);
    let r = sweep_period(
        &PlantSim::new(model),
        &ctrl,
        &segments,
        &ComputeBudget::default(),
        &[4, 8, 12, 16, 20],
        &AdaptationConfig::new(20, 2)?,
        10,
    )?;
    println!("{:>8} {:>6} {:>10} {:>10} {:>7}", "segment", "best q", "best", "adaptive", "ratio");
    for (seg, (q, best, adaptive)) in period_summary(&r) {
        println!("{seg:>8} {q:6} {best:10.4} {adaptive:10.4} {:7.3}", adaptive / best);
    }
    Ok(())
}
