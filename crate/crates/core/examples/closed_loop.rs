//! One closed-loop hour of the benchmark under a load step, fixed and adaptive.

use rtmpc::adapt::AdaptationConfig;
use rtmpc::bench::{benchmark_controller, benchmark_formulation, benchmark_plant, transient_scenario, PlantSpec};
use rtmpc::metrics::CostBreakdown;
use rtmpc::sim::{run_closed_loop, ComputeBudget, PlantSim, Schedule, SolverKind};

fn main() -> rtmpc::Result<()> {
    let spec = PlantSpec::default();
    let (model, op) = benchmark_plant(&spec)?;
    let ctrl = benchmark_controller(benchmark_formulation(&model, &op, 100)?, SolverKind::Ode);
    let plant = PlantSim::new(model);
    let scenario = transient_scenario(spec.baseline_load);
    let budget = ComputeBudget::default();

    for schedule in [
        Schedule::Fixed { q: 20 },
        Schedule::Adaptive {
            q0: 10,
            cfg: AdaptationConfig::new(20, 2)?,
        },
    ] {
        let rec = run_closed_loop(&plant, &ctrl, &scenario, &budget, schedule)?;
        let b = CostBreakdown::from_record(&rec);
        println!(
            "{:28} windows {:5}  closed-loop {:.4e}  open-loop {:.4e}  c1 {:.3e}",
            rec.label,
            rec.windows.len(),
            b.closed_loop_total,
            b.open_loop_total(),
            b.c1
        );
    }
    let rec = run_closed_loop(&plant, &ctrl, &scenario, &budget, Schedule::Fixed { q: 20 })?;
    let path = std::env::temp_dir().join("rtmpc_closed_loop.csv");
    rec.write_csv_file(&path)?;
    println!("run written to {}", path.display());
    Ok(())
}
