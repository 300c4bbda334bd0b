// Transition matrix, hybrid kernels J and Z for a planar periodic system.
//
//     cargo run --example transition_kernels

use std::fs::File;
use std::path::Path;

use depca_lab::transition::{fundamental, hybrid_kernels};
use depca_lab::{CoefficientSystem, FnCoefficients, Matrix, Result, TimeGrid, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let grid = TimeGrid::from_integers(-10, 10, 10)?;
    let coeffs = FnCoefficients::new(
        2,
        |t| Matrix::from_row_slice(2, 2, &[-1.0 + 0.2 * t.cos(), 0.5, -0.5, 0.3 * t.sin()]),
        |_| Matrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, -0.4]),
        |t| Vector::from_column_slice(&[t.cos(), 1.0]),
    );
    let system = CoefficientSystem::new(coeffs, &grid)?;
    let phi = fundamental(&system, &grid)?;
    println!(
        "RK4 with {} substeps per cell, k0 = {:.6}",
        phi.substeps(),
        phi.k0()
    );

    // cocycle: Φ(t,r)Φ(r,s) = Φ(t,s)
    let (t, r, s) = (3.7, -1.2, -6.4);
    let err = (phi.phi(t, r)? * phi.phi(r, s)? - phi.phi(t, s)?).amax();
    println!("cocycle defect at ({t}, {r}, {s}): {err:.2e}");

    let hybrid = hybrid_kernels(phi, &system)?;
    println!("max cond J(n+1, n) = {:.4}", hybrid.max_j_condition());
    println!("J(0.5, 0) =\n{:.6}", hybrid.j(0.5, 0.0)?);
    println!("Z(0.5, 0) =\n{:.6}", hybrid.z(0.5, 0.0)?);

    hybrid
        .transition()
        .write_csv(File::create(out.join("transition.csv"))?)?;
    hybrid.write_csv(File::create(out.join("hybrid.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/transition_kernels"))
}
