// Nonlinear equation x' = -2x + x^2 - x([t])/2 + nu cos t solved by
// linearising at the equilibrium 0 and contracting on the remainder.
//
//     cargo run --example nonlinear_linearization

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use depca_lab::depca::HybridSolution;
use depca_lab::dichotomy::DetectOptions;
use depca_lab::perturb::{jacobians, solve_nonlinear, ContractionOptions, Perturbation, VectorField};
use depca_lab::{Result, TimeGrid, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let f: Arc<VectorField> =
        Arc::new(|_, x: &Vector, y: &Vector| Vector::from_element(1, -2.0 * x[0] + x[0] * x[0] - 0.5 * y[0]));
    let zero = Vector::zeros(1);
    let (a, b) = jacobians(f.as_ref(), 0.0, &zero, &zero)?;
    println!("Jacobians at 0: A = {:.8}, B = {:.8}", a[(0, 0)], b[(0, 0)]);

    let grid = TimeGrid::from_integers(-40, 40, 10)?;
    let xi = HybridSolution::from_values(grid, vec![zero; grid.len()])?;
    let pert = Perturbation::new(
        |t, _: &Vector, _: &Vector, nu| Vector::from_element(1, nu * t.cos()),
        0.05,
        0.5,
    )?;
    let opts = ContractionOptions {
        seed: 3,
        ..Default::default()
    };
    let sol = solve_nonlinear(f, &xi, &pert, &DetectOptions::default(), &opts)?;
    let c = &sol.perturbed.certificate;
    println!(
        "kappa = {:.4}, {} iterations, |psi - xi| = {:.5}, residual {:.1e}",
        c.kappa, c.iterations, c.distance, c.final_residual
    );
    sol.perturbed
        .solution
        .write_csv(File::create(out.join("psi.csv"))?)?;
    c.write_json(File::create(out.join("certificate.json"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/nonlinear_linearization"))
}
