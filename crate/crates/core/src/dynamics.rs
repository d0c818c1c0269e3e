//! Discrete flow dynamics driven by kernel-expanded velocity fields.
//!
//! At step `k` the velocity field is `vₖ(z) = Σⱼ K(x⁰ⱼ, z) αᵏⱼ`, expanded on the
//! fixed initial grid, and the grid moves by one explicit Euler step
//!
//! ```text
//! xᵏ⁺¹ₙ = xᵏₙ + τₖ Σⱼ K(x⁰ⱼ, xᵏₙ) αᵏⱼ        i.e.  xᵏ⁺¹ = xᵏ + τₖ Uᵏ αᵏ
//! ```
//!
//! where `Uᵏ[n][j] = K(xᵏₙ, x⁰ⱼ)`. The kinetic energy is the fixed quadratic
//! form `kin(α) = ½ Σₖ τₖ (αᵏ)ᵀ 𝐊 αᵏ` with `𝐊 = U⁰` the Gram matrix on `x⁰`.
//!
//! Controls and states are stored as `N×3` matrices (one row per point) so the
//! kernel matrices act on all three coordinates at once.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{cross_gram, Gaussian, KernelMatrix};
use crate::problem::SnapshotProblem;
use crate::surface::{block_to_points, dsd_points, points_to_block, LocalDisparity, SurfaceGrid};
use crate::Point;

/// Strictly increasing sample times `t₀ < … < t_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    steps: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::input("a time grid needs at least two instants"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::input("time grid contains a non-finite instant"));
        }
        let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(k) = steps.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::input(format!("time grid is not strictly increasing at step {k}")));
        }
        Ok(TimeGrid { times, steps })
    }

    /// `L + 1` equally spaced instants on `[0, t_end]`.
    pub fn uniform(l: usize, t_end: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::input("a time grid needs at least one step"));
        }
        TimeGrid::new((0..=l).map(|k| t_end * k as f64 / l as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `τₖ = tₖ₊₁ − tₖ`.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Number of steps `L`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Control blocks `α⁰ … α^{L−1}`, each `N×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    alphas: Vec<DMatrix<f64>>,
}

impl ControlSequence {
    pub fn new(alphas: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = alphas.first() else {
            return Err(Error::input("a control sequence needs at least one block"));
        };
        let n = first.nrows();
        for (k, a) in alphas.iter().enumerate() {
            if a.nrows() != n || a.ncols() != 3 {
                return Err(Error::input(format!(
                    "control block {k} is {}x{}, expected {n}x3",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("control block {k} has a non-finite entry")));
            }
        }
        Ok(ControlSequence { alphas })
    }

    pub fn zeros(steps: usize, n_points: usize) -> Self {
        ControlSequence {
            alphas: vec![DMatrix::zeros(n_points, 3); steps],
        }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.alphas
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.alphas[0].nrows()
    }

    pub fn norm(&self) -> f64 {
        self.alphas.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        ControlSequence {
            alphas: self.alphas.iter().map(|a| a * c).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &ControlSequence) -> Self {
        ControlSequence {
            alphas: self.alphas.iter().zip(&other.alphas).map(|(a, b)| a + b * c).collect(),
        }
    }

    pub fn dot(&self, other: &ControlSequence) -> f64 {
        self.alphas.iter().zip(&other.alphas).map(|(a, b)| a.dot(b)).sum()
    }
}

/// Grids `x⁰ … x^L` produced by a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SurfaceGrid>,
}

impl Trajectory {
    pub fn last(&self) -> &SurfaceGrid {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Evaluates `v(z) = Σₙ K(basisₙ, z) αₙ` at each query point.
pub fn velocity_at(
    controls_k: &DMatrix<f64>,
    basis: &SurfaceGrid,
    query: &[Point],
    sigma_v: f64,
) -> Result<Vec<Point>> {
    let g = Gaussian::new(sigma_v)?;
    if controls_k.nrows() != basis.len() || controls_k.ncols() != 3 {
        return Err(Error::input(format!(
            "control block is {}x{}, basis has {} points",
            controls_k.nrows(),
            controls_k.ncols(),
            basis.len()
        )));
    }
    if query.is_empty() {
        return Ok(Vec::new());
    }
    let u = cross_gram(query, basis.points(), &g);
    Ok(block_to_points(&(u * controls_k)))
}

/// `Uᵏ` for a current grid: `U[n][j] = K(currentₙ, basisⱼ)`.
pub(crate) fn transport_matrix(current: &[Point], basis: &[Point], g: &Gaussian) -> DMatrix<f64> {
    cross_gram(current, basis, g)
}

fn check_shapes(initial: &SurfaceGrid, controls: &ControlSequence, time: &TimeGrid) -> Result<()> {
    if controls.len() != time.len() {
        return Err(Error::input(format!(
            "{} control blocks for {} time steps",
            controls.len(),
            time.len()
        )));
    }
    if controls.n_points() != initial.len() {
        return Err(Error::input(format!(
            "controls have {} rows, initial grid has {} points",
            controls.n_points(),
            initial.len()
        )));
    }
    Ok(())
}

/// Rolls the discrete dynamics forward from `initial`.
pub fn rollout(
    initial: &SurfaceGrid,
    controls: &ControlSequence,
    time: &TimeGrid,
    sigma_v: f64,
) -> Result<Trajectory> {
    let g = Gaussian::new(sigma_v)?;
    check_shapes(initial, controls, time)?;
    let blocks = rollout_blocks(initial.points(), controls.blocks(), time.steps(), &g)?;
    let states = blocks
        .iter()
        .map(|b| initial.with_points(block_to_points(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { states })
}

pub(crate) fn rollout_blocks(
    basis: &[Point],
    alphas: &[DMatrix<f64>],
    steps: &[f64],
    g: &Gaussian,
) -> Result<Vec<DMatrix<f64>>> {
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut x = points_to_block(basis);
    let mut pts = basis.to_vec();
    for (k, (alpha, &tau)) in alphas.iter().zip(steps).enumerate() {
        let u = transport_matrix(&pts, basis, g);
        let next = &x + (u * alpha) * tau;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        states.push(std::mem::replace(&mut x, next));
        pts = block_to_points(&x);
    }
    states.push(x);
    Ok(states)
}

/// `½ Σₖ τₖ (αᵏ)ᵀ 𝐊 αᵏ`.
pub fn kinetic_energy(controls: &ControlSequence, gram: &KernelMatrix, time: &TimeGrid) -> Result<f64> {
    if controls.len() != time.len() {
        return Err(Error::input(format!(
            "{} control blocks for {} time steps",
            controls.len(),
            time.len()
        )));
    }
    if controls.n_points() != gram.len() {
        return Err(Error::input(format!(
            "controls have {} rows, Gram matrix is {}x{}",
            controls.n_points(),
            gram.len(),
            gram.len()
        )));
    }
    Ok(kinetic_blocks(controls.blocks(), &gram.values, time.steps()))
}

pub(crate) fn kinetic_blocks(alphas: &[DMatrix<f64>], gram: &DMatrix<f64>, steps: &[f64]) -> f64 {
    alphas
        .iter()
        .zip(steps)
        .map(|(a, &tau)| 0.5 * tau * a.dot(&(gram * a)))
        .sum()
}

/// Terms of `J(α) = kin(α) + λ Σₖ dsdₖ(xᵏ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub kin: f64,
    /// Unweighted disparity sum `Σₖ dsdₖ(xᵏ)` over `k = 1..L`.
    pub disp: f64,
    pub total: f64,
    pub per_snapshot_dsd: Vec<f64>,
}

/// Evaluates the matching cost of a control sequence.
pub fn total_cost(controls: &ControlSequence, problem: &SnapshotProblem) -> Result<CostBreakdown> {
    check_shapes(&problem.initial, controls, &problem.time)?;
    let g = problem.kernels.velocity();
    let states = rollout_blocks(problem.initial.points(), controls.blocks(), problem.time.steps(), &g)?;
    let gram = crate::kernel::gram(problem.initial.points(), &g);
    Ok(cost_of_states(controls.blocks(), &states, &gram, problem))
}

pub(crate) fn cost_of_states(
    alphas: &[DMatrix<f64>],
    states: &[DMatrix<f64>],
    gram: &DMatrix<f64>,
    problem: &SnapshotProblem,
) -> CostBreakdown {
    let kin = kinetic_blocks(alphas, gram, problem.time.steps());
    let per_snapshot_dsd: Vec<f64> = states[1..]
        .iter()
        .zip(problem.disparities())
        .map(|(x, ws)| dsd_points(&block_to_points(x), ws))
        .collect();
    let disp = per_snapshot_dsd.iter().sum::<f64>();
    CostBreakdown {
        kin,
        disp,
        total: kin + problem.lambda * disp,
        per_snapshot_dsd,
    }
}

/// Gradient of `J` with respect to every control, by backward accumulation
/// through the state recursion including the state dependence of `Uᵏ`.
pub fn cost_gradient(controls: &ControlSequence, problem: &SnapshotProblem) -> Result<ControlSequence> {
    check_shapes(&problem.initial, controls, &problem.time)?;
    let g = problem.kernels.velocity();
    let gram = crate::kernel::gram(problem.initial.points(), &g);
    let (_, grad) = cost_and_gradient(controls.blocks(), &gram, problem)?;
    Ok(grad)
}

pub(crate) fn cost_and_gradient(
    alphas: &[DMatrix<f64>],
    gram: &DMatrix<f64>,
    problem: &SnapshotProblem,
) -> Result<(CostBreakdown, ControlSequence)> {
    let g = problem.kernels.velocity();
    let basis = problem.initial.points();
    let steps = problem.time.steps();
    let l = steps.len();
    let states = rollout_blocks(basis, alphas, steps, &g)?;
    let inv_var = g.inv_var();

    let mut kin = 0.0;
    let mut per_snapshot_dsd = vec![0.0; l];
    let mut grads = vec![DMatrix::zeros(basis.len(), 3); l];
    // adjoint = ∂J/∂xᵏ⁺¹, accumulated backwards
    let mut adjoint = DMatrix::<f64>::zeros(basis.len(), 3);
    for k in (0..l).rev() {
        let x_next = block_to_points(&states[k + 1]);
        let local = LocalDisparity::new(&x_next, &problem.disparities()[k]);
        per_snapshot_dsd[k] = local.value;
        adjoint += points_to_block(&local.gradient) * problem.lambda;

        let tau = steps[k];
        let alpha = &alphas[k];
        let x_k = block_to_points(&states[k]);
        let u = transport_matrix(&x_k, basis, &g);
        let k_alpha = gram * alpha;
        kin += 0.5 * tau * alpha.dot(&k_alpha);
        grads[k] = (k_alpha + u.transpose() * &adjoint) * tau;

        if k > 0 {
            // ∂xᵏ⁺¹ₙ/∂xᵏₙ = I + τ Σⱼ αⱼ ∇_z K(x⁰ⱼ, z)ᵀ with ∇_z K = −K (z − x⁰ⱼ)/σ².
            let mut back = adjoint.clone();
            for n in 0..basis.len() {
                let p = Point::new(adjoint[(n, 0)], adjoint[(n, 1)], adjoint[(n, 2)]);
                let mut acc = Point::zeros();
                for (j, b) in basis.iter().enumerate() {
                    let a_dot_p = alpha[(j, 0)] * p.x + alpha[(j, 1)] * p.y + alpha[(j, 2)] * p.z;
                    acc += (x_k[n] - b) * (u[(n, j)] * a_dot_p);
                }
                for c in 0..3 {
                    back[(n, c)] -= tau * inv_var * acc[c];
                }
            }
            adjoint = back;
        }
    }
    let disp = per_snapshot_dsd.iter().sum::<f64>();
    let cost = CostBreakdown {
        kin,
        disp,
        total: kin + problem.lambda * disp,
        per_snapshot_dsd,
    };
    Ok((cost, ControlSequence { alphas: grads }))
}
