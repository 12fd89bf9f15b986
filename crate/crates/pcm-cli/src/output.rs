//! CSV and manifest emission. Floats print via the shortest round-trip
//! formatting, so identical runs produce byte-identical files.

use pcm_core::pcm::{EpochLoss, Metrics, ModelKind, ObjectiveMetrics};
use pcm_core::wingrock::Trajectory;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub fn write_manifest(dir: &Path, body: &str) -> io::Result<()> {
    std::fs::write(dir.join("manifest.txt"), body)
}

pub fn write_loss_history(dir: &Path, kind: ModelKind, history: &[EpochLoss]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(
        dir.join(format!("loss_{}.csv", kind.name())),
    )?);
    writeln!(w, "epoch,train_loss,valid_loss")?;
    for row in history {
        writeln!(w, "{},{},{}", row.epoch, row.train_loss, row.valid_loss)?;
    }
    Ok(())
}

pub fn write_metrics(dir: &Path, rows: &[(ModelKind, Metrics)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(
        w,
        "model_kind,mean_minimizer_err,mean_minvalue_err,mean_solve_seconds,excluded_samples"
    )?;
    for (kind, m) in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            kind.name(),
            m.mean_minimizer_err,
            m.mean_minvalue_err,
            m.mean_solve_seconds,
            m.excluded_samples
        )?;
    }
    Ok(())
}

pub fn write_objective_metrics(
    dir: &Path,
    rows: &[(String, ObjectiveMetrics)],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("case2_metrics.csv"))?);
    writeln!(
        w,
        "model_kind,mean_objective,mean_solve_seconds,excluded_samples"
    )?;
    for (name, m) in rows {
        writeln!(
            w,
            "{},{},{},{}",
            name, m.mean_objective, m.mean_solve_seconds, m.excluded_samples
        )?;
    }
    Ok(())
}

/// `(x, u, f_hat)` triples on a product grid, one file per model.
pub fn write_surface(
    dir: &Path,
    file_stem: &str,
    rows: &[(f64, f64, f64)],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{file_stem}.csv")))?);
    writeln!(w, "x,u,value")?;
    for (x, u, v) in rows {
        writeln!(w, "{x},{u},{v}")?;
    }
    Ok(())
}

const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

/// Closed-loop trajectory; angles in degrees at this boundary. The final
/// row carries the terminal state with empty input columns.
pub fn write_trajectory(dir: &Path, name: &str, traj: &Trajectory) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(
        dir.join(format!("trajectory_{name}.csv")),
    )?);
    writeln!(w, "t_s,phi_deg,phidot_degps,delta_g,solve_s")?;
    for (k, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        if k < traj.inputs.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                t,
                s[0] * RAD_TO_DEG,
                s[1] * RAD_TO_DEG,
                traj.inputs[k],
                traj.solve_seconds[k]
            )?;
        } else {
            writeln!(w, "{},{},{},,", t, s[0] * RAD_TO_DEG, s[1] * RAD_TO_DEG)?;
        }
    }
    Ok(())
}

/// Closed-loop summary per controller.
pub struct ClosedLoopRow {
    pub name: String,
    pub terminal_phi_err_deg: f64,
    pub terminal_phidot_err_degps: f64,
    pub max_abs_input: f64,
    pub mean_step_solve_seconds: f64,
}

pub fn write_closed_loop(dir: &Path, rows: &[ClosedLoopRow]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("closed_loop.csv"))?);
    writeln!(
        w,
        "model_kind,terminal_phi_err_deg,terminal_phidot_err_degps,max_abs_input,mean_step_solve_seconds"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.name,
            r.terminal_phi_err_deg,
            r.terminal_phidot_err_degps,
            r.max_abs_input,
            r.mean_step_solve_seconds
        )?;
    }
    Ok(())
}

/// Training dataset dump for the setpoint-tracking case; angles in degrees.
pub fn write_nmpc_dataset(
    dir: &Path,
    dataset: &pcm_core::pcm::Dataset,
    horizon: usize,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("dataset.csv"))?);
    let u_cols: Vec<String> = (1..=horizon).map(|k| format!("u{k}")).collect();
    writeln!(
        w,
        "x0_phi,x0_phidot,xd_phi,xd_phidot,{},J,split_tag",
        u_cols.join(",")
    )?;
    let tag_of = |i: usize| -> &'static str {
        if dataset.train_indices().contains(&i) {
            "train"
        } else if dataset.valid_indices().contains(&i) {
            "valid"
        } else {
            "test"
        }
    };
    for (i, s) in dataset.samples.iter().enumerate() {
        let x: Vec<String> = s.x.iter().map(|v| (v * RAD_TO_DEG).to_string()).collect();
        let u: Vec<String> = s.u.iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{}",
            x.join(","),
            u.join(","),
            s.value,
            tag_of(i)
        )?;
    }
    Ok(())
}

/// Pass/fail report from the check suites.
pub fn write_suite_report(
    dir: &Path,
    file_name: &str,
    rows: &[pcm_core::check::SuiteReport],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(file_name))?);
    writeln!(w, "suite,cases,worst,threshold,pass")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.suite, r.cases, r.worst, r.threshold, r.pass
        )?;
    }
    Ok(())
}
