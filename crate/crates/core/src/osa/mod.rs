//! Douglas–Rachford operator splitting in consensus form.
//!
//! The unknown `Z = (x, α)` is duplicated into `Z` and `Z̃`. Each iteration
//! applies the kinetic prox to `Z̃ + u`, the disparity prox to `Z − u`, and
//! accumulates the disagreement in `u`.

pub mod disparity;
pub mod quadratic;

use std::time::Instant;

use nalgebra::DMatrix;

pub use disparity::{disparity_prox, disparity_prox_runs, InnerRun, NewtonOptions};
use disparity::{quadratic_factor, sequential_prox, uses_cg, Preconditioner};
pub use quadratic::{constraint_residual, kkt_residual, quadratic_prox, QuadraticProx};

use crate::dynamics::{cost_of_states, rollout_blocks, transport_matrix, ControlSequence, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::{gram, Gaussian};
use crate::problem::SnapshotProblem;
use crate::surface::{block_to_points, hausdorff, mesh_size, SurfaceGrid};

/// A point of the product space: `L + 1` state blocks and `L` control blocks,
/// each `N × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPoint {
    pub states: Vec<DMatrix<f64>>,
    pub controls: Vec<DMatrix<f64>>,
}

impl SplitPoint {
    /// Every block zero.
    pub fn zeros(steps: usize, n_points: usize) -> Self {
        SplitPoint {
            states: vec![DMatrix::zeros(n_points, 3); steps + 1],
            controls: vec![DMatrix::zeros(n_points, 3); steps],
        }
    }

    /// Constant trajectory at `initial` with zero controls.
    pub fn at_rest(initial: &SurfaceGrid, steps: usize) -> Self {
        let x0 = initial.to_block();
        SplitPoint {
            states: vec![x0; steps + 1],
            controls: vec![DMatrix::zeros(initial.len(), 3); steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    fn zip_with(&self, other: &SplitPoint, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> SplitPoint {
        SplitPoint {
            states: self.states.iter().zip(&other.states).map(|(a, b)| f(a, b)).collect(),
            controls: self.controls.iter().zip(&other.controls).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &SplitPoint) -> SplitPoint {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SplitPoint) -> SplitPoint {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn norm_squared(&self) -> f64 {
        self.states.iter().chain(&self.controls).map(|b| b.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

/// Splits an `(N·L) × 3` stack into `L` blocks of `N` rows.
pub(crate) fn split_rows(stacked: &DMatrix<f64>, l: usize) -> Vec<DMatrix<f64>> {
    let n = stacked.nrows() / l;
    (0..l).map(|j| stacked.rows(j * n, n).into_owned()).collect()
}

pub(crate) fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let mut out = DMatrix::zeros(n * blocks.len(), 3);
    for (j, b) in blocks.iter().enumerate() {
        out.rows_mut(j * n, n).copy_from(b);
    }
    out
}

/// The three sequences of the splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub z: SplitPoint,
    pub z_tilde: SplitPoint,
    pub u: SplitPoint,
    pub iteration: usize,
}

impl ConsensusState {
    /// `Z⁰ = 0` (apart from the pinned `x⁰`), `Z̃⁰` at rest, `u⁰ = 0`.
    pub fn initial(problem: &SnapshotProblem) -> Self {
        let l = problem.steps();
        let n = problem.n_points();
        let mut z = SplitPoint::zeros(l, n);
        z.states[0] = problem.initial.to_block();
        ConsensusState {
            z,
            z_tilde: SplitPoint::at_rest(&problem.initial, l),
            u: SplitPoint::zeros(l, n),
            iteration: 0,
        }
    }

    /// `‖Z − Z̃‖`.
    pub fn gap(&self) -> f64 {
        self.z.sub(&self.z_tilde).norm()
    }
}

/// Solver knobs. Problem-level weights live in [`crate::ProblemSettings`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once every snapshot's Hausdorff distance is at most this multiple
    /// of the target mesh size. Non-positive disables the rule.
    pub stop_factor: f64,
    /// Relative consensus gap `‖Z − Z̃‖ / ‖Z̃‖` below which the solve stops.
    pub gap_tol: f64,
    /// Relative cost change over `stag_window` iterations counted as stagnation.
    pub stag_tol: f64,
    pub stag_window: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
    /// Use `Uᵏ ≡ 𝐊` in both proximal steps.
    pub frozen_u: bool,
    /// Record wall-clock seconds per iteration; zeros keep histories reproducible.
    pub record_timing: bool,
    /// Carried along for provenance. The splitting itself draws no random numbers.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            stop_factor: 1.5,
            gap_tol: 1e-9,
            stag_tol: 1e-9,
            stag_window: 10,
            inner_tol: 1e-8,
            inner_max: 50,
            frozen_u: false,
            record_timing: true,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.stop_factor.is_finite() {
            return Err(Error::param("stop_factor", "must be finite"));
        }
        for (name, v) in [("gap_tol", self.gap_tol), ("stag_tol", self.stag_tol), ("inner_tol", self.inner_tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.inner_max == 0 {
            return Err(Error::param("inner_max", "must be at least 1"));
        }
        if self.stag_window == 0 {
            return Err(Error::param("stag_window", "must be at least 1"));
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.inner_tol,
            max_iterations: self.inner_max,
        }
    }
}

/// Metrics after one outer iteration, taken on the controls of `Z̃` rolled
/// out with the exact dynamics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub kin: f64,
    /// Unweighted `Σₖ dsdₖ`.
    pub disp: f64,
    /// `hausdorff(xᵏ, yᵏ)` for `k = 1..L`.
    pub hausdorff: Vec<f64>,
    pub consensus_gap: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Termination {
    MaxIterations,
    HausdorffVsMesh,
    ConsensusGap,
    Stagnation,
    /// Only produced by the gradient-descent baseline.
    GradientTolerance,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::MaxIterations => "max-iterations",
            Termination::HausdorffVsMesh => "hausdorff-vs-mesh",
            Termination::ConsensusGap => "consensus-gap",
            Termination::Stagnation => "stagnation",
            Termination::GradientTolerance => "gradient-tolerance",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub controls: ControlSequence,
    pub trajectory: Trajectory,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    /// Cholesky factorizations of matrices built from `𝐊` during the solve.
    pub gram_factorizations: usize,
}

/// A numeric failure together with everything computed before it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error} (after {} completed iterations)", partial.history.len())]
pub struct SolveFailure {
    pub error: Error,
    pub partial: Box<SolveReport>,
}

/// Per-solve data that never changes between iterations.
pub struct DouglasRachford<'p> {
    problem: &'p SnapshotProblem,
    options: SolverOptions,
    kernel: Gaussian,
    gram: DMatrix<f64>,
    kinetic: QuadraticProx,
    /// Newton preconditioners for the steps whose transport is always `𝐊`.
    fixed_preconditioners: Vec<Option<Preconditioner>>,
}

impl<'p> DouglasRachford<'p> {
    pub fn new(problem: &'p SnapshotProblem, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let kernel = problem.kernels.velocity();
        let gram = gram(problem.initial.points(), &kernel);
        let kinetic = QuadraticProx::new(problem, &gram)?;
        let fixed_preconditioners = if uses_cg(problem.n_points()) {
            let gram_steps = if options.frozen_u { problem.steps() } else { 1 };
            problem.time.steps()[..gram_steps]
                .iter()
                .map(|&tau| quadratic_factor(&gram, tau))
                .collect()
        } else {
            Vec::new()
        };
        Ok(DouglasRachford {
            problem,
            options,
            kernel,
            gram,
            kinetic,
            fixed_preconditioners,
        })
    }

    /// Factorizations of the kinetic system so far (one per solve).
    pub fn factorizations(&self) -> usize {
        self.kinetic.factorizations()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Uᵏ` for `k = 0..L−1` along the states of `point`.
    pub fn transports(&self, point: &SplitPoint) -> Vec<DMatrix<f64>> {
        let l = self.problem.steps();
        if self.options.frozen_u {
            return vec![self.gram.clone(); l];
        }
        let basis = self.problem.initial.points();
        (0..l)
            .map(|k| {
                if k == 0 {
                    self.gram.clone()
                } else {
                    transport_matrix(&block_to_points(&point.states[k]), basis, &self.kernel)
                }
            })
            .collect()
    }

    /// One splitting iteration.
    pub fn iterate(&self, state: &ConsensusState) -> Result<ConsensusState> {
        let x0 = self.problem.initial.to_block();

        let mut anchor = state.z_tilde.add(&state.u);
        anchor.states[0] = x0.clone();
        let frozen = self.transports(&state.z_tilde);
        let z = self.kinetic.apply(&anchor, &frozen)?;
        if cfg!(debug_assertions) {
            let steps = self.problem.time.steps();
            let feas = constraint_residual(&z, &frozen, steps);
            let kkt = kkt_residual(&z, &anchor, &frozen, &self.gram, steps, self.problem.rho);
            debug_assert!(feas <= 1e-9, "kinetic prox infeasible: {feas:e}");
            debug_assert!(kkt <= 1e-9, "kinetic prox KKT residual {kkt:e}");
        }

        let mut anchor = z.sub(&state.u);
        anchor.states[0] = x0;
        let frozen = self.transports(&z);
        let (z_tilde, _) = sequential_prox(
            &anchor,
            &frozen,
            self.problem,
            &self.options.newton(),
            &self.fixed_preconditioners,
        )?;

        let mut u = state.u.add(&z_tilde.sub(&z));
        u.states[0].fill(0.0);
        Ok(ConsensusState {
            z,
            z_tilde,
            u,
            iteration: state.iteration + 1,
        })
    }

    /// Rolls out the controls of `Z̃` and measures them.
    fn record(&self, state: &ConsensusState, seconds: f64) -> Result<(IterationRecord, Vec<DMatrix<f64>>)> {
        let p = self.problem;
        let states = rollout_blocks(p.initial.points(), &state.z_tilde.controls, p.time.steps(), &self.kernel)?;
        let cost = cost_of_states(&state.z_tilde.controls, &states, &self.gram, p);
        let hd = states[1..]
            .iter()
            .zip(&p.targets)
            .map(|(x, y)| {
                let moved = p.initial.with_points(block_to_points(x))?;
                Ok(hausdorff(&moved, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let record = IterationRecord {
            iteration: state.iteration,
            cost: cost.total,
            kin: cost.kin,
            disp: cost.disp,
            hausdorff: hd,
            consensus_gap: state.gap(),
            seconds: if self.options.record_timing { seconds } else { 0.0 },
        };
        Ok((record, states))
    }

    fn report(&self, state: &ConsensusState, states: Vec<DMatrix<f64>>, history: Vec<IterationRecord>, termination: Termination) -> SolveReport {
        let grids = states
            .iter()
            .map(|x| {
                self.problem
                    .initial
                    .with_points(block_to_points(x))
                    .expect("rolled-out states keep the grid size")
            })
            .collect();
        SolveReport {
            controls: ControlSequence::new(state.z_tilde.controls.clone()).expect("controls keep their shape"),
            trajectory: Trajectory { states: grids },
            history,
            termination,
            gram_factorizations: self.factorizations(),
        }
    }

    /// Iterates until a stopping rule fires.
    pub fn run(&self) -> std::result::Result<SolveReport, SolveFailure> {
        let p = self.problem;
        let opts = &self.options;
        let mut state = ConsensusState::initial(p);
        let mut states = vec![p.initial.to_block(); p.steps() + 1];
        let mut history: Vec<IterationRecord> = Vec::new();
        let fail = |error: Error, state: &ConsensusState, states: Vec<DMatrix<f64>>, history: Vec<IterationRecord>| SolveFailure {
            error,
            partial: Box::new(self.report(state, states, history, Termination::MaxIterations)),
        };
        let meshes = match p.targets.iter().map(mesh_size).collect::<Result<Vec<_>>>() {
            Ok(m) => m,
            Err(e) => return Err(fail(e, &state, states, history)),
        };
        let tilde_scale = |s: &ConsensusState| s.z_tilde.norm().max(f64::MIN_POSITIVE);

        let mut termination = Termination::MaxIterations;
        while state.iteration < opts.max_iterations {
            let started = Instant::now();
            let next = match self.iterate(&state) {
                Ok(s) => s,
                Err(e) => return Err(fail(e, &state, states, history)),
            };
            let elapsed = started.elapsed().as_secs_f64();
            state = next;
            let (record, rolled) = match self.record(&state, elapsed) {
                Ok(r) => r,
                Err(e) => return Err(fail(e, &state, states, history)),
            };
            states = rolled;
            let matched = opts.stop_factor > 0.0
                && record.hausdorff.iter().zip(&meshes).all(|(h, m)| *h <= opts.stop_factor * m);
            let gap_small = record.consensus_gap <= opts.gap_tol * tilde_scale(&state);
            history.push(record);
            let stagnant = history.len() > opts.stag_window && {
                let now = history[history.len() - 1].cost;
                let before = history[history.len() - 1 - opts.stag_window].cost;
                (now - before).abs() <= opts.stag_tol * now.abs().max(f64::MIN_POSITIVE)
            };
            if matched {
                termination = Termination::HausdorffVsMesh;
                break;
            }
            if gap_small {
                termination = Termination::ConsensusGap;
                break;
            }
            if stagnant {
                termination = Termination::Stagnation;
                break;
            }
        }
        Ok(self.report(&state, states, history, termination))
    }
}

/// One splitting iteration with a freshly built solver context.
///
/// The solver itself keeps a [`DouglasRachford`] so that the kinetic factor
/// is reused; this entry point rebuilds it on every call.
pub fn dr_iterate(state: &ConsensusState, problem: &SnapshotProblem, options: &SolverOptions) -> Result<ConsensusState> {
    DouglasRachford::new(problem, options.clone())?.iterate(state)
}

/// Runs the splitting solver from the canonical starting point.
pub fn solve(problem: &SnapshotProblem, options: &SolverOptions) -> std::result::Result<SolveReport, SolveFailure> {
    let solver = match DouglasRachford::new(problem, options.clone()) {
        Ok(s) => s,
        Err(error) => {
            let l = problem.steps();
            let states = vec![problem.initial.clone(); l + 1];
            return Err(SolveFailure {
                error,
                partial: Box::new(SolveReport {
                    controls: ControlSequence::zeros(l, problem.n_points()),
                    trajectory: Trajectory { states },
                    history: Vec::new(),
                    termination: Termination::MaxIterations,
                    gram_factorizations: 0,
                }),
            });
        }
    };
    solver.run()
}


/// Outcome of one solve in a [`sweep_rho`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rho: f64,
    pub cost: f64,
    /// Largest per-snapshot Hausdorff distance at the end of the solve.
    pub hausdorff: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Solves `problem` once per value of `ρ`, everything else unchanged.
///
/// ```
/// use snapmatch::osa::{sweep_rho, SolverOptions};
/// use snapmatch::synth::{generate, BaseShape, Deformation, DeformationKind, SyntheticSpec};
///
/// let spec = SyntheticSpec {
///     base_shape: BaseShape::Sphere,
///     n_points: 20,
///     m_points: 20,
///     n_snapshots: 1,
///     deformation: Deformation { kind: DeformationKind::Translation, magnitude: 0.2 },
///     noise: 0.0,
///     seed: 1,
/// };
/// let (problem, _) = generate(&spec).unwrap();
/// let rhos = [0.5 * problem.rho, problem.rho, 2.0 * problem.rho];
/// let options = SolverOptions { max_iterations: 20, ..Default::default() };
/// let sweep = sweep_rho(&problem, &rhos, &options).unwrap();
/// assert_eq!(sweep.len(), 3);
/// ```
pub fn sweep_rho(problem: &SnapshotProblem, rhos: &[f64], options: &SolverOptions) -> Result<Vec<SweepPoint>> {
    rhos.iter()
        .map(|&rho| {
            let mut p = problem.clone();
            p.rho = rho;
            let p = SnapshotProblem::new(p.initial, p.targets, p.time, p.kernels, p.lambda, p.rho)?;
            let r = solve(&p, options).map_err(|f| f.error)?;
            let last = r.history.last();
            Ok(SweepPoint {
                rho,
                cost: last.map_or(f64::NAN, |h| h.cost),
                hausdorff: last.map_or(f64::NAN, |h| h.hausdorff.iter().copied().fold(0.0, f64::max)),
                iterations: r.history.len(),
                termination: r.termination,
            })
        })
        .collect()
}
