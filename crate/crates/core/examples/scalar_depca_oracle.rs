// Constant scalar equations against their closed-form solution, plus the
// bounded solution of x' = -x - x([t])/2 + 3, which is x = 2.
//
//     cargo run --example scalar_depca_oracle

use std::fs::File;
use std::path::Path;

use depca_lab::depca::{oracle_suite, RapSolver};
use depca_lab::dichotomy::DetectOptions;
use depca_lab::{CoefficientSystem, FnCoefficients, Result, TimeGrid};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for m in [10, 50, 100] {
        let report = oracle_suite(50, m, 2024)?;
        println!(
            "m = {m:>3}: max error over {} cases {:.3e}",
            report.cases.len(),
            report.max_error
        );
        if m == 100 {
            serde_json::to_writer_pretty(File::create(out.join("oracle.json"))?, &report)?;
        }
    }

    let grid = TimeGrid::from_integers(-50, 50, 10)?;
    let system = CoefficientSystem::new(FnCoefficients::scalar(|_| -1.0, |_| -0.5, |_| 3.0), &grid)?;
    let solver = RapSolver::with_margin(&system, &grid, &DetectOptions::default(), 1e-12)?;
    let sol = solver.solve()?;
    let err = sol
        .values()
        .iter()
        .map(|v| (v[0] - 2.0).abs())
        .fold(0.0, f64::max);
    println!("bounded solution: max |x - 2| = {err:.2e}");
    sol.write_csv(File::create(out.join("bounded.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/scalar_depca_oracle"))
}
