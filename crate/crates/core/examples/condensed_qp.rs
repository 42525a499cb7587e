//! Builds the benchmark plant and its condensed QP, and round-trips the model file.

use nalgebra::DVector;
use rtmpc::bench::{benchmark_formulation, benchmark_plant, PlantSpec};
use rtmpc::mpc::file;

fn main() -> rtmpc::Result<()> {
    let (model, op) = benchmark_plant(&PlantSpec::default())?;
    println!(
        "plant: {} states, {} inputs, {} outputs, spectral radius {:.4}",
        model.n_states(),
        model.n_inputs(),
        model.n_outputs(),
        model.spectral_radius()
    );
    let form = benchmark_formulation(&model, &op, 100)?;
    println!(
        "QP: {} variables, {} output rows, {} rate rows",
        form.hessian().nrows(),
        form.n_output_rows(),
        form.n_rate_rows()
    );
    let x = DVector::from_element(model.n_states(), 0.1);
    let u = DVector::zeros(model.n_inputs());
    let w = form.hold_forecast(&DVector::from_element(1, 5.0));
    let prob = form.problem(&x, &u, &w)?;
    println!("cost of the zero profile from a perturbed state: {:.3}", prob.objective(&DVector::zeros(prob.n_z()))?);

    let text = file::to_string(&model, &op);
    let (back, _) = file::parse(&text, std::path::Path::new("<memory>"))?;
    println!("model file round trip exact: {}", back == model);
    Ok(())
}
