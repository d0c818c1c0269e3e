//! The `match`, `strain`, `compare` and `synth` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use snapmatch::baseline::{solve_gd, BASELINE_LABEL};
use snapmatch::osa::{solve, IterationRecord, SolveFailure, SolveReport};
use snapmatch::strain::{standard_quantiles, strain_intensity, strain_quantiles};
use snapmatch::surface::{robust_hausdorff, SurfaceGrid};
use snapmatch::synth::{generate, SyntheticSpec};
use snapmatch::SnapshotProblem;

use crate::config::{Config, ProblemSection};
use crate::error::CliError;
use crate::io::{read_surface, write_surface, Table};

pub const OSA_LABEL: &str = "OSA";

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn out_dir(config: &Config) -> PathBuf {
    config.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn history_table(history: &[IterationRecord], steps: usize) -> Table {
    let mut header = vec!["iteration".to_string(), "cost".into(), "kin".into(), "disp".into()];
    header.extend((1..=steps).map(|k| format!("hausdorff_{k}")));
    header.push("consensus_gap".into());
    header.push("seconds".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    for r in history {
        let mut row = vec![r.iteration.to_string(), r.cost.to_string(), r.kin.to_string(), r.disp.to_string()];
        row.extend(r.hausdorff.iter().map(f64::to_string));
        row.push(r.consensus_gap.to_string());
        row.push(r.seconds.to_string());
        table.row(&row);
    }
    table
}

/// Writes `trajectory_k.csv` (`k = 0..L`), `controls_k.csv` (`k = 0..L−1`)
/// and the history file.
pub fn write_report(dir: &Path, report: &SolveReport, history_name: &str) -> Result<(), CliError> {
    ensure_dir(dir)?;
    for (k, grid) in report.trajectory.states.iter().enumerate() {
        let plain = SurfaceGrid::new(grid.points().to_vec())?;
        write_surface(&dir.join(format!("trajectory_{k}.csv")), &plain)?;
    }
    for (k, alpha) in report.controls.blocks().iter().enumerate() {
        let mut t = Table::new(&["ax", "ay", "az"]);
        for row in alpha.row_iter() {
            t.row(&[row[0].to_string(), row[1].to_string(), row[2].to_string()]);
        }
        t.write(&dir.join(format!("controls_{k}.csv")))?;
    }
    let steps = report.controls.len();
    history_table(&report.history, steps).write(&dir.join(history_name))
}

fn unwrap_solve(result: Result<SolveReport, SolveFailure>, dir: &Path, history_name: &str) -> Result<SolveReport, CliError> {
    match result {
        Ok(r) => Ok(r),
        Err(failure) => {
            // Keep whatever was computed before the failure.
            let _ = write_report(dir, &failure.partial, history_name);
            Err(failure.error.into())
        }
    }
}

pub struct MatchOutcome {
    pub report: SolveReport,
    pub out: PathBuf,
}

pub fn run_match(config: &Config) -> Result<MatchOutcome, CliError> {
    let problem = config.load_problem()?;
    let out = out_dir(config);
    ensure_dir(&out)?;
    let report = unwrap_solve(solve(&problem, &config.solver), &out, "history.csv")?;
    write_report(&out, &report, "history.csv")?;
    Ok(MatchOutcome { report, out })
}

/// Strain of `deformed` relative to the triangulated `reference`; writes
/// `strain.csv` and `strain_quantiles.csv` into `out`.
pub fn run_strain(reference: &Path, deformed: &Path, out: &Path) -> Result<Vec<f64>, CliError> {
    let reference_grid = read_surface(reference)?;
    if reference_grid.triangles().is_none() {
        return Err(CliError::Validation(format!(
            "{}: strain requires a triangle mesh reference (`N T` format)",
            reference.display()
        )));
    }
    let deformed_grid = read_surface(deformed)?;
    let field = strain_intensity(&reference_grid, &deformed_grid)?;
    ensure_dir(out)?;
    let mut t = Table::new(&["vertex_index", "x", "y", "z", "SI"]);
    for (i, (p, si)) in reference_grid.points().iter().zip(&field.values).enumerate() {
        let si = si.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        t.row(&[i.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string(), si]);
    }
    t.write(&out.join("strain.csv"))?;
    let qs = standard_quantiles();
    let values = strain_quantiles(&field, &qs)?;
    let mut t = Table::new(&["quantile", "value"]);
    for (q, v) in qs.iter().zip(&values) {
        t.row(&[q.to_string(), v.to_string()]);
    }
    t.write(&out.join("strain_quantiles.csv"))?;
    if !field.undefined().is_empty() {
        eprintln!(
            "warning: strain undefined at {} vertices with zero reference area",
            field.undefined().len()
        );
    }
    Ok(field.defined_values())
}

/// Latest `trajectory_k.csv` in a match output directory.
pub fn final_trajectory_file(run_dir: &Path) -> Result<PathBuf, CliError> {
    let mut k = 0;
    while run_dir.join(format!("trajectory_{}.csv", k + 1)).exists() {
        k += 1;
    }
    let path = run_dir.join(format!("trajectory_{k}.csv"));
    if k == 0 && !path.exists() {
        return Err(CliError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no trajectory files in run directory"),
        ));
    }
    Ok(path)
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub robust_hausdorff: f64,
    pub kinetic_energy: f64,
    pub cpu_seconds: f64,
    pub iterations: usize,
}

/// `max_k rHD(xᵏ, yᵏ)` at the given quantile.
pub fn worst_robust_hausdorff(report: &SolveReport, problem: &SnapshotProblem, quantile: f64) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for (x, y) in report.trajectory.states[1..].iter().zip(&problem.targets) {
        worst = worst.max(robust_hausdorff(x, y, quantile)?);
    }
    Ok(worst)
}

fn compare_row(
    method: &str,
    report: &SolveReport,
    problem: &SnapshotProblem,
    quantile: f64,
    seconds: f64,
) -> Result<CompareRow, CliError> {
    let kinetic_energy = match report.history.last() {
        Some(r) => r.kin,
        None => snapmatch::dynamics::total_cost(&report.controls, problem)?.kin,
    };
    Ok(CompareRow {
        method: method.to_string(),
        robust_hausdorff: worst_robust_hausdorff(report, problem, quantile)?,
        kinetic_energy,
        cpu_seconds: seconds,
        iterations: report.history.len(),
    })
}

/// Runs both solvers on one problem and writes `compare.csv` plus
/// `history_osa.csv` and `history_gd.csv`. Times are wall-clock seconds.
pub fn run_compare_problem(problem: &SnapshotProblem, config: &Config, out: &Path) -> Result<Vec<CompareRow>, CliError> {
    ensure_dir(out)?;
    let quantile = config.output.quantile;
    let timed = config.solver.record_timing;

    let started = Instant::now();
    let osa = unwrap_solve(solve(problem, &config.solver), &out.join("osa"), "history.csv")?;
    let osa_seconds = started.elapsed().as_secs_f64();
    history_table(&osa.history, problem.steps()).write(&out.join("history_osa.csv"))?;

    let started = Instant::now();
    let gd = unwrap_solve(solve_gd(problem, &config.baseline), &out.join("gd"), "history.csv")?;
    let gd_seconds = started.elapsed().as_secs_f64();
    history_table(&gd.history, problem.steps()).write(&out.join("history_gd.csv"))?;

    let rows = vec![
        compare_row(OSA_LABEL, &osa, problem, quantile, if timed { osa_seconds } else { 0.0 })?,
        compare_row(
            BASELINE_LABEL,
            &gd,
            problem,
            quantile,
            if config.baseline.record_timing { gd_seconds } else { 0.0 },
        )?,
    ];
    let mut t = Table::new(&["method", "robust_hausdorff", "kinetic_energy", "cpu_seconds", "iterations"]);
    for r in &rows {
        t.row(&[
            r.method.clone(),
            r.robust_hausdorff.to_string(),
            r.kinetic_energy.to_string(),
            r.cpu_seconds.to_string(),
            r.iterations.to_string(),
        ]);
    }
    t.write(&out.join("compare.csv"))?;
    Ok(rows)
}

pub fn run_compare(config: &Config) -> Result<Vec<CompareRow>, CliError> {
    let problem = config.load_problem()?;
    run_compare_problem(&problem, config, &out_dir(config))
}

/// Writes a generated problem as a bundle: `x0`, `y1..yL`, the ground truth
/// `truth_k` and a `config.toml` ready for `match` or `compare`.
pub fn run_synth(spec: &SyntheticSpec, out: &Path) -> Result<PathBuf, CliError> {
    let (problem, truth) = generate(spec)?;
    ensure_dir(out)?;
    let ext = if problem.initial.triangles().is_some() { "mesh" } else { "csv" };
    let initial = PathBuf::from(format!("x0.{ext}"));
    write_surface(&out.join(&initial), &problem.initial)?;
    let mut targets = Vec::new();
    for (k, y) in problem.targets.iter().enumerate() {
        let name = PathBuf::from(format!("y{}.csv", k + 1));
        write_surface(&out.join(&name), &SurfaceGrid::new(y.points().to_vec())?)?;
        targets.push(name);
    }
    for (k, x) in truth.states.iter().enumerate() {
        write_surface(&out.join(format!("truth_{k}.csv")), &SurfaceGrid::new(x.points().to_vec())?)?;
    }
    let mut section = ProblemSection::new(initial, targets);
    section.n_points = Some(spec.n_points);
    section.m_points = Some(spec.m_points);
    let mut config = Config::new(section);
    config.solver.seed = spec.seed;
    config.output.dir = Some(PathBuf::from("out"));
    let path = out.join("config.toml");
    crate::io::write_atomic(&path, &config.to_toml())?;
    Ok(path)
}
