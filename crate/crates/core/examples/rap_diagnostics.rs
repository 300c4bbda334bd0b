// Remote-translation scans: the demo sequence, its piecewise-linear
// interpolant, and a solution driven by a discontinuous step forcing.
//
//     cargo run --example rap_diagnostics

use std::fs::File;
use std::path::Path;

use depca_lab::rap::{
    demo_sequence, integer_taus, interpolate_sequence, scan_function, scan_sequence, SampledFunction,
    ScanMode, ScanOptions,
};
use depca_lab::{Result, TimeGrid, Vector};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let opts = ScanOptions {
        epsilon: 0.5,
        tail_start: 500,
        tail_end: 2000,
        density_bound: None,
    };
    let u = demo_sequence(-2100, 2100)?;
    let report = scan_sequence(&u, &opts, 50)?;
    println!(
        "demo sequence, eps = {}: accepted {:?}, max gap {}, {:?}",
        opts.epsilon, report.taus_found, report.max_gap, report.verdict
    );
    report.write_csv(File::create(out.join("demo_scan.csv"))?)?;

    let third = scan_sequence(
        &u,
        &ScanOptions {
            epsilon: opts.epsilon / 3.0,
            ..opts
        },
        50,
    )?;
    let f = interpolate_sequence(&u, 4)?;
    let interp = scan_function(&f, &opts, &integer_taus(50), ScanMode::Rap)?;
    let missing: Vec<f64> = third
        .taus_found
        .iter()
        .copied()
        .filter(|&t| !interp.accepts(t))
        .collect();
    println!("eps/3 lags missing from the interpolant scan: {missing:?}");

    // a step function u([t]) jumps at integers: RAP fails, ZRAP compares
    // within intervals and accepts the period
    let grid = TimeGrid::from_integers(-60, 60, 8)?;
    let step =
        SampledFunction::from_fn_anchored(grid, |_, n| Vector::from_element(1, (n.rem_euclid(3)) as f64));
    let short = ScanOptions {
        epsilon: 0.1,
        tail_start: 10,
        tail_end: 40,
        density_bound: None,
    };
    let rap = scan_function(&step, &short, &integer_taus(9), ScanMode::Rap)?;
    let zrap = scan_function(&step, &short, &integer_taus(9), ScanMode::Zrap)?;
    println!(
        "step function: RAP {:?} (jump at t = {:?}), ZRAP accepts {:?}",
        rap.verdict, rap.discontinuity, zrap.taus_found
    );
    zrap.write_json(File::create(out.join("step_zrap.json"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/rap_diagnostics"))
}
