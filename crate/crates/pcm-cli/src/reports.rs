//! The `gradcheck` and `props` commands: run the check suites at the
//! configured sample counts and emit pass/fail report CSVs.

use crate::case1;
use crate::config::RunConfig;
use crate::output;
use pcm_core::check::{
    convexity_suite, dlse_gradient_suite, fnn_gradient_suite, gcm_suite, implicit_vjp_suite,
    lse_gradient_suite, lse_ma_bound_suite, minorant_global_minimizer_suite,
    plse_gradient_suite, training_gradient_suite, SuiteReport,
};
use pcm_core::gcm::pgcm_continuity_probe;
use pcm_core::numerics::named_stream;
use pcm_core::pcm::{suboptimality_bound_check, EplseModel};
use pcm_core::solve::BoxSet;
use std::error::Error;
use std::path::Path;

/// Finite-difference validation of every analytic gradient, the implicit
/// minimizer gradient, and the full training-loss gradient.
pub fn run_gradcheck(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<SuiteReport>, Box<dyn Error>> {
    std::fs::create_dir_all(out_dir)?;
    output::write_manifest(out_dir, &cfg.manifest("gradcheck"))?;
    let seed = cfg.seed();
    let n = cfg.gradcheck_cases;
    let reports = vec![
        fnn_gradient_suite(n, seed),
        lse_gradient_suite(n, seed),
        plse_gradient_suite(n, seed, false),
        plse_gradient_suite(n, seed, true),
        dlse_gradient_suite(n, seed),
        implicit_vjp_suite(cfg.vjp_cases, seed),
        training_gradient_suite(cfg.train_grad_cases, seed),
    ];
    output::write_suite_report(out_dir, "gradcheck.csv", &reports)?;
    Ok(reports)
}

/// Structural property sweeps: global minimizer via the minorant, the
/// suboptimality bound, envelope lemmas, the LSE/max-affine bound,
/// parameterized convexity, and envelope continuity.
pub fn run_props(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<SuiteReport>, Box<dyn Error>> {
    std::fs::create_dir_all(out_dir)?;
    output::write_manifest(out_dir, &cfg.manifest("props"))?;
    let seed = cfg.seed();
    let mut reports = vec![
        minorant_global_minimizer_suite(cfg.prop_models, cfg.prop_xs, cfg.prop_grid, seed),
        lse_ma_bound_suite(50, 1000, seed),
        gcm_suite(seed),
        convexity_suite(50, seed),
    ];
    reports.push(suboptimality_probe(cfg)?);
    reports.push(envelope_continuity_probe()?);
    output::write_suite_report(out_dir, "props.csv", &reports)?;
    Ok(reports)
}

/// The suboptimality bound self-calibrates through the measured sup-error,
/// so it must hold even for an untrained model against the benchmark
/// objective.
fn suboptimality_probe(cfg: &RunConfig) -> Result<SuiteReport, Box<dyn Error>> {
    let mut rng = named_stream(cfg.seed(), "props-subopt");
    let model = EplseModel::init(
        1,
        1,
        cfg.terms,
        cfg.temperature,
        &cfg.subnet_hidden,
        &cfg.gap_hidden,
        BoxSet::cube(-1.0, 1.0, 1),
        cfg.solver.clone(),
        &mut rng,
    )?;
    let xs: Vec<Vec<f64>> = (0..21)
        .map(|i| vec![-1.0 + 2.0 * (i as f64) / 20.0])
        .collect();
    let us: Vec<Vec<f64>> = (0..201)
        .map(|i| vec![-1.0 + 2.0 * (i as f64) / 200.0])
        .collect();
    let report = suboptimality_bound_check(&model, case1::objective, &xs, &us)?;
    Ok(SuiteReport {
        suite: "suboptimality-bound",
        cases: report.x_count,
        worst: report.worst_violation,
        threshold: 1e-3,
        pass: report.holds(1e-3),
    })
}

/// Envelope slices at shrinking parameter separations must not drift apart.
fn envelope_continuity_probe() -> Result<SuiteReport, Box<dyn Error>> {
    let pairs = vec![
        (vec![0.5], vec![0.6]),
        (vec![0.5], vec![0.51]),
        (vec![0.5], vec![0.501]),
    ];
    let rows = pgcm_continuity_probe(
        |x, u| case1::objective(x, &[u]),
        &pairs,
        -1.0,
        1.0,
        1001,
    )?;
    // worst violation of the non-increasing trend
    let mut worst = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        worst = worst.max(w[1].1 - w[0].1);
    }
    Ok(SuiteReport {
        suite: "envelope-continuity",
        cases: rows.len(),
        worst,
        threshold: 0.0,
        pass: worst <= 0.0,
    })
}
