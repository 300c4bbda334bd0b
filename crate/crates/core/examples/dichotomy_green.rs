// Exponential dichotomy of a saddle recursion, its Green function and the
// bounded solution obtained by summing the Green series.
//
//     cargo run --example dichotomy_green

use std::fs::File;
use std::path::Path;

use depca_lab::dichotomy::{bisummability_scan, bounded_solution, detect_dichotomy};
use depca_lab::reduction::DiscreteSystem;
use depca_lab::{Matrix, Result, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let disc = DiscreteSystem::from_fn(
        -120,
        120,
        |n| {
            let s = 0.1 * (n as f64).sin();
            Matrix::from_row_slice(2, 2, &[0.5 + s, 0.1, 0.0, 2.0 - s])
        },
        |n| Vector::from_column_slice(&[(n as f64 * 0.7).cos(), 1.0]),
    )?;
    let dd = detect_dichotomy(&disc)?;
    println!(
        "{:?} dichotomy: alpha = {:.4}, K = {:.4} (fit excess {:.3})",
        dd.provenance(),
        dd.alpha(),
        dd.k(),
        dd.eps_fit()
    );
    println!("G(0,0) =\n{:.6}", dd.green(0, 0));

    let bounded = bounded_solution(&disc, &dd, 1e-12)?;
    println!(
        "truncation {}, interior {:?}, max residual {:.2e}, sup {:.4} <= bound {:.4}: {}",
        bounded.truncation,
        bounded.interior,
        bounded.max_residual,
        bounded.interior_values().sup_norm(),
        bounded.bound,
        bounded.bound_holds()
    );

    let scan = bisummability_scan(&dd, &[1, 2, 5, 10, 20], (-50, 50), 1e-12)?;
    for (tau, v) in &scan.proxy {
        println!("  sup |G(n+tau, m+tau) - G(n, m)| summed, tau = {tau:>2}: {v:.4}");
    }
    scan.write_csv(File::create(out.join("bisum.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/dichotomy_green"))
}
