//! Gradient descent on `J(α)` with Armijo backtracking, the comparison
//! baseline for the splitting solver.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::dynamics::{cost_and_gradient, cost_of_states, rollout_blocks, ControlSequence, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::gram;
use crate::osa::{IterationRecord, SolveFailure, SolveReport, Termination};
use crate::problem::SnapshotProblem;
use crate::surface::{block_to_points, hausdorff};

/// Label used in comparison reports.
pub const BASELINE_LABEL: &str = "GD-Armijo baseline";

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineOptions {
    pub max_iterations: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    /// Upper bound on the trial step, also the very first trial.
    pub initial_step: f64,
    /// Absolute gradient norm at which the descent stops.
    pub grad_tol: f64,
    /// Start each line search from the Barzilai–Borwein step (capped at
    /// `initial_step`) instead of `initial_step` itself.
    pub barzilai_borwein: bool,
    pub record_timing: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            max_iterations: 50,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 100.0,
            grad_tol: 1e-10,
            barzilai_borwein: false,
            record_timing: true,
        }
    }
}

impl BaselineOptions {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must lie in (0, 1), got {v}")))
            }
        };
        unit("armijo_c", self.armijo_c)?;
        unit("backtrack_factor", self.backtrack_factor)?;
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::param("initial_step", "must be finite and > 0"));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::param("grad_tol", "must be finite and > 0"));
        }
        Ok(())
    }
}

fn combine(a: &[DMatrix<f64>], b: &[DMatrix<f64>], t: f64) -> Vec<DMatrix<f64>> {
    a.iter().zip(b).map(|(x, y)| x + y * t).collect()
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Runs the baseline from zero controls.
pub fn solve_gd(problem: &SnapshotProblem, options: &BaselineOptions) -> std::result::Result<SolveReport, SolveFailure> {
    let kernel = problem.kernels.velocity();
    let k = gram(problem.initial.points(), &kernel);
    let basis = problem.initial.points();
    let steps = problem.time.steps();
    let l = problem.steps();

    let mut alphas = vec![DMatrix::zeros(problem.n_points(), 3); l];
    let mut states = vec![problem.initial.to_block(); l + 1];
    let mut history: Vec<IterationRecord> = Vec::new();
    let report = |alphas: &[DMatrix<f64>], states: &[DMatrix<f64>], history: Vec<IterationRecord>, termination| SolveReport {
        controls: ControlSequence::new(alphas.to_vec()).expect("controls keep their shape"),
        trajectory: Trajectory {
            states: states
                .iter()
                .map(|x| problem.initial.with_points(block_to_points(x)).expect("grid size is preserved"))
                .collect(),
        },
        history,
        termination,
        gram_factorizations: 0,
    };
    if let Err(error) = options.validate() {
        return Err(SolveFailure {
            error,
            partial: Box::new(report(&alphas, &states, history, Termination::MaxIterations)),
        });
    }

    let mut previous: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = None;
    let mut termination = Termination::MaxIterations;
    for iteration in 1..=options.max_iterations {
        let started = Instant::now();
        let (cost, grad) = match cost_and_gradient(&alphas, &k, problem) {
            Ok(r) => r,
            Err(error) => {
                return Err(SolveFailure {
                    error,
                    partial: Box::new(report(&alphas, &states, history, Termination::MaxIterations)),
                })
            }
        };
        let grad = grad.into_blocks();
        let g2 = dot(&grad, &grad);
        if g2.sqrt() <= options.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        // Barzilai–Borwein guess from the last accepted step, clipped.
        let mut t = match previous.as_ref().filter(|_| options.barzilai_borwein) {
            Some((d_alpha, old_grad)) => {
                let d_grad = combine(&grad, old_grad, -1.0);
                let s = dot(d_alpha, d_alpha) / dot(d_alpha, &d_grad);
                if s.is_finite() && s > 0.0 {
                    s.min(options.initial_step)
                } else {
                    options.initial_step
                }
            }
            None => options.initial_step,
        };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = combine(&alphas, &grad, -t);
            if let Ok(trial_states) = rollout_blocks(basis, &trial, steps, &kernel) {
                let c = cost_of_states(&trial, &trial_states, &k, problem);
                if c.total.is_finite() && c.total <= cost.total - options.armijo_c * t * g2 && c.total < cost.total {
                    accepted = Some((trial, trial_states, c));
                    break;
                }
            }
            t *= options.backtrack_factor;
        }
        let Some((next, next_states, next_cost)) = accepted else {
            termination = Termination::Stagnation;
            break;
        };
        let d_alpha = combine(&next, &alphas, -1.0);
        alphas = next;
        states = next_states;
        previous = Some((d_alpha, grad));

        let hd = states[1..]
            .iter()
            .zip(&problem.targets)
            .map(|(x, y)| problem.initial.with_points(block_to_points(x)).map(|g| hausdorff(&g, y)))
            .collect::<Result<Vec<_>>>();
        let hd = match hd {
            Ok(h) => h,
            Err(error) => {
                return Err(SolveFailure {
                    error,
                    partial: Box::new(report(&alphas, &states, history, Termination::MaxIterations)),
                })
            }
        };
        let elapsed = started.elapsed().as_secs_f64();
        history.push(IterationRecord {
            iteration,
            cost: next_cost.total,
            kin: next_cost.kin,
            disp: next_cost.disp,
            hausdorff: hd,
            consensus_gap: 0.0,
            seconds: if options.record_timing { elapsed } else { 0.0 },
        });
    }
    Ok(report(&alphas, &states, history, termination))
}
