//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! initial = "x0.csv"
//! targets = ["y1.csv", "y2.csv"]
//! # optional: times = [0.0, 0.5, 1.0], t_end, n_points, m_points,
//! #           sigma_v, sigma_d, ridge, lambda, rho
//!
//! [solver]      # every SolverOptions field
//! max_iterations = 200
//!
//! [baseline]    # every BaselineOptions field
//! max_iterations = 50
//!
//! [output]
//! dir = "out"
//! quantile = 0.95
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snapmatch::baseline::BaselineOptions;
use snapmatch::dynamics::TimeGrid;
use snapmatch::osa::SolverOptions;
use snapmatch::{ProblemSettings, SnapshotProblem};

use crate::error::CliError;
use crate::io::read_surface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub initial: PathBuf,
    pub targets: Vec<PathBuf>,
    /// `L + 1` increasing times; uniform on `[0, t_end]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Declared point counts, checked against the files when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl ProblemSection {
    pub fn new(initial: PathBuf, targets: Vec<PathBuf>) -> Self {
        ProblemSection {
            initial,
            targets,
            times: None,
            t_end: None,
            n_points: None,
            m_points: None,
            sigma_v: None,
            sigma_d: None,
            ridge: None,
            lambda: None,
            rho: None,
        }
    }

    pub fn settings(&self) -> ProblemSettings {
        ProblemSettings {
            sigma_v: self.sigma_v,
            sigma_d: self.sigma_d,
            ridge: self.ridge,
            lambda: self.lambda,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Quantile of the robust Hausdorff distance in comparison reports.
    pub quantile: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub baseline: BaselineOptions,
    #[serde(default)]
    pub output: OutputSection,
}

impl Config {
    pub fn new(problem: ProblemSection) -> Self {
        Config {
            problem,
            solver: SolverOptions::default(),
            baseline: BaselineOptions::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Config::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut config.problem.initial);
        config.problem.targets.iter_mut().for_each(anchor);
        if let Some(dir) = config.output.dir.as_mut() {
            anchor(dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    /// Reads every surface and builds the problem with defaults filled in.
    pub fn load_problem(&self) -> Result<SnapshotProblem, CliError> {
        let p = &self.problem;
        if p.targets.is_empty() {
            return Err(CliError::Config("problem.targets lists no snapshot files".into()));
        }
        let initial = read_surface(&p.initial)?;
        let targets = p
            .targets
            .iter()
            .map(|t| read_surface(t))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(n) = p.n_points {
            if initial.len() != n {
                return Err(CliError::Validation(format!(
                    "{} has {} points, problem.n_points declares {n}",
                    p.initial.display(),
                    initial.len()
                )));
            }
        }
        if let Some(m) = p.m_points {
            for (path, t) in p.targets.iter().zip(&targets) {
                if t.len() != m {
                    return Err(CliError::Validation(format!(
                        "{} has {} points, problem.m_points declares {m}",
                        path.display(),
                        t.len()
                    )));
                }
            }
        }
        let time = match &p.times {
            Some(times) => {
                if times.len() != targets.len() + 1 {
                    return Err(CliError::Config(format!(
                        "problem.times has {} entries for {} targets (expected {})",
                        times.len(),
                        targets.len(),
                        targets.len() + 1
                    )));
                }
                TimeGrid::new(times.clone())?
            }
            None => TimeGrid::uniform(targets.len(), p.t_end.unwrap_or(1.0))?,
        };
        Ok(p.settings().build(initial, targets, time)?)
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub max_iterations: Option<usize>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma_v: Option<f64>,
    pub sigma_d: Option<f64>,
    pub ridge: Option<f64>,
    pub stop_factor: Option<f64>,
    pub gap_tol: Option<f64>,
    pub stag_tol: Option<f64>,
    pub stag_window: Option<usize>,
    pub inner_tol: Option<f64>,
    pub inner_max: Option<usize>,
    pub frozen_u: bool,
    pub no_timing: bool,
    pub seed: Option<u64>,
    pub quantile: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut Config) {
        let s = &mut config.solver;
        macro_rules! set {
            ($target:expr, $value:expr) => {
                if let Some(v) = $value {
                    $target = v;
                }
            };
        }
        set!(s.max_iterations, self.max_iterations);
        set!(s.stop_factor, self.stop_factor);
        set!(s.gap_tol, self.gap_tol);
        set!(s.stag_tol, self.stag_tol);
        set!(s.stag_window, self.stag_window);
        set!(s.inner_tol, self.inner_tol);
        set!(s.inner_max, self.inner_max);
        set!(s.seed, self.seed);
        if self.frozen_u {
            s.frozen_u = true;
        }
        if self.no_timing {
            s.record_timing = false;
            config.baseline.record_timing = false;
        }
        let p = &mut config.problem;
        for (slot, value) in [
            (&mut p.rho, self.rho),
            (&mut p.lambda, self.lambda),
            (&mut p.sigma_v, self.sigma_v),
            (&mut p.sigma_d, self.sigma_d),
            (&mut p.ridge, self.ridge),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        set!(config.output.quantile, self.quantile);
        if let Some(out) = &self.out {
            config.output.dir = Some(out.clone());
        }
    }
}
