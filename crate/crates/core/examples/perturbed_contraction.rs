// Contraction solve of x' = -x + 2 + nu sin(x) around the bounded solution
// of the linear part, and the shrinking of psi - xi as nu goes to zero.
//
//     cargo run --example perturbed_contraction

use std::fs::File;
use std::path::Path;

use depca_lab::depca::RapSolver;
use depca_lab::dichotomy::DetectOptions;
use depca_lab::perturb::{
    ladder_shrinks, nu_ladder, solve_perturbed_depca, write_ladder_csv, ContractionOptions, Perturbation,
};
use depca_lab::{CoefficientSystem, FnCoefficients, Result, TimeGrid, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let grid = TimeGrid::from_integers(-40, 40, 10)?;
    let system = CoefficientSystem::new(FnCoefficients::scalar(|_| -1.0, |_| 0.0, |_| 2.0), &grid)?;
    let solver = RapSolver::with_margin(&system, &grid, &DetectOptions::default(), 1e-12)?;
    let (xi, _) = solver.solve_full()?;

    let pert = Perturbation::new(|_, x: &Vector, _: &Vector, nu| x.map(|v| nu * v.sin()), 0.2, 1.0)?;
    let opts = ContractionOptions {
        seed: 1,
        ..Default::default()
    };
    let sol = solve_perturbed_depca(&solver, &xi, &pert, &opts)?;
    let c = &sol.certificate;
    println!(
        "nu = {}: kappa = {:.4} (a-priori {:.2}), {} iterations, residual {:.1e}",
        c.nu, c.kappa, c.kappa_apriori, c.iterations, c.final_residual
    );
    let psi = sol.target(&solver)?;
    println!(
        "psi(0) = {:.6} (fixed point of y = 2 + 0.2 sin y)",
        psi.at(0.0).unwrap()[0]
    );
    c.write_json(File::create(out.join("certificate.json"))?)?;

    let rows = nu_ladder(&[0.2, 0.1, 0.05, 0.025], |nu| {
        Ok(solve_perturbed_depca(&solver, &xi, &pert.with_nu(nu)?, &opts)?.certificate)
    });
    for r in &rows {
        println!("  nu {:<6} |psi - xi| = {:.5}", r.nu, r.distance);
    }
    println!("distance shrinks with nu: {}", ladder_shrinks(&rows));
    write_ladder_csv(&rows, File::create(out.join("nu_ladder.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/perturbed_contraction"))
}
