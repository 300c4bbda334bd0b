// Reduction to x(n+1) = C(n)x(n) + h(n) and agreement with the continuous
// initial value solution at the integers.
//
//     cargo run --example discrete_reduction

use std::fs::File;
use std::path::Path;

use depca_lab::depca::solve_initial;
use depca_lab::reduction::{iterate, reduce};
use depca_lab::transition::{fundamental, hybrid_kernels};
use depca_lab::{CoefficientSystem, FnCoefficients, Result, TimeGrid, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let grid = TimeGrid::from_integers(0, 30, 10)?;
    let system = CoefficientSystem::new(
        FnCoefficients::scalar(
            |t| -1.0 + 0.3 * t.sin(),
            |t| 0.4 * t.cos(),
            |t| 1.0 + 0.5 * (2.0 * t).sin(),
        ),
        &grid,
    )?;
    let kernel = hybrid_kernels(fundamental(&system, &grid)?, &system)?;
    let disc = reduce(&kernel, &system)?;
    println!("C(0) = {:.8}, h(0) = {:.8}", disc.c(0)[(0, 0)], disc.h(0)[0]);

    let x0 = Vector::from_element(1, 0.25);
    let seq = iterate(&disc, &x0, 0, 30)?;
    let cont = solve_initial(&kernel, &system, &x0)?;
    let gap = (0..=30)
        .map(|n| (seq.at(n) - cont.at(n as f64).unwrap()).norm())
        .fold(0.0, f64::max);
    println!("max |x_discrete(n) - x(n)| over 0..=30: {gap:.2e}");
    println!("x(30) = {:.8}", seq.at(30)[0]);

    disc.write_csv(File::create(out.join("discrete.csv"))?)?;
    cont.write_csv(File::create(out.join("trajectory.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/discrete_reduction"))
}
