// Positive bounded solution of the Lasota–Wazewska model
// y' = -δ(t)y + p(t)e^{-γ y([t])} with quasi-periodic rates, its contraction
// threshold, a γ sweep, and a remote-translation scan of the result.

use std::fs::File;
use std::path::Path;

use depca_lab::lasota::{
    ergodic_kernel_scan, gamma_sweep, write_sweep_csv, ErgodicOptions, LasotaOptions, LasotaParams,
    LasotaSolver,
};
use depca_lab::rap::ScanOptions;
use depca_lab::{Result, TimeGrid};

pub fn run_example(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let delta = |t: f64| 1.0 + 0.2 * (2f64.sqrt() * t).cos();
    let p = |t: f64| 1.0 + 0.1 * t.cos();
    let params = LasotaParams::new(delta, p, 0.05, 0.5);
    let target = TimeGrid::from_integers(-500, 500, 10)?;

    let solver = LasotaSolver::new(&params, &target, 1e-12)?;
    println!("S_p = {:.6}, gamma* = {:.6}", solver.s_p(), solver.gamma_star());

    let scan = ScanOptions {
        epsilon: 0.1,
        tail_start: 100,
        tail_end: 300,
        density_bound: None,
    };
    let opts = LasotaOptions {
        scan: Some((scan, 150)),
        ..Default::default()
    };
    let sol = solver.solve(params.gamma, &opts)?;
    let summary = sol.summary(params.gamma);
    println!(
        "gamma = {}: {} iterations, kappa = {:.4}, psi in [{:.6}, {:.6}]",
        params.gamma, summary.iterations, summary.kappa, summary.min, summary.max
    );
    let bound = 1.1 / sol.mean_delta;
    println!("bound sup(p)/mean(delta) = {bound:.6}");
    if let Some(rap) = &sol.rap {
        println!(
            "rap scan: {} of {} lags accepted, max gap {}, verdict {:?}",
            rap.taus_found.len(),
            rap.remote_variation.len(),
            rap.max_gap,
            rap.verdict
        );
        rap.write_csv(File::create(out.join("lasota_rap.csv"))?)?;
    }
    sol.solution
        .write_csv(File::create(out.join("lasota_psi.csv"))?)?;
    serde_json::to_writer_pretty(File::create(out.join("lasota_summary.json"))?, &summary)?;

    let gammas: Vec<f64> = [0.1, 0.25, 0.5, 0.9, 1.1, 1.5]
        .iter()
        .map(|f| f * solver.gamma_star())
        .collect();
    let rows = gamma_sweep(&solver, &gammas, &LasotaOptions::default());
    for r in &rows {
        println!(
            "  gamma {:.4}  kappa {:.3}  converged {}",
            r.gamma, r.kappa, r.converged
        );
    }
    write_sweep_csv(&rows, File::create(out.join("gamma_sweep.csv"))?)?;

    let ergodic = ergodic_kernel_scan(
        &delta,
        &[0.0, 1.0, 4.4375, 8.875],
        &ErgodicOptions {
            tail_start: 100,
            tail_end: 300,
            m: 16,
            delta_minus: 0.5,
            tol: 1e-8,
        },
    )?;
    for (tau, v) in &ergodic.rows {
        println!("  ergodic kernel tau {tau:>7}: {v:.3e}");
    }
    ergodic.write_csv(File::create(out.join("ergodic_scan.csv"))?)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(&std::env::temp_dir().join("depca-lab/lasota_wazewska"))
}
