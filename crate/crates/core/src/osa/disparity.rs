//! Disparity proximal step, solved one time step at a time.
//!
//! For `r = 0..L−1` the state `xʳ` is already known (it is `x⁰` for `r = 0`),
//! so substituting `x^{r+1} = xʳ + τᵣ Uʳ αʳ` leaves a smooth function of `αʳ`:
//!
//! ```text
//! h_r(α) = λ dsd_{r+1}(xʳ + τᵣ Uʳ α) + ρ ‖xʳ + τᵣ Uʳ α − w^{r+1}‖² + ρ ‖α − aʳ‖²
//! ```
//!
//! Each `h_r` is minimized by damped Newton descent started at `aʳ`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::SplitPoint;
use crate::error::{Error, Result};
use crate::problem::SnapshotProblem;
use crate::surface::{block_to_points, dsd_points, points_to_block, DisparityWorkspace, LocalDisparity};

/// Above this many unknowns (`3N`) the Newton system is solved matrix-free.
const DENSE_LIMIT: usize = 192;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Stopping rule of the inner Newton runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Gradient-norm threshold, relative to `max(1, ‖∇h(aʳ)‖)`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Per-step outcome of an inner Newton run, mostly for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerRun {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective values at every accepted iterate, starting with the warm start.
    pub objective: Vec<f64>,
}

/// One sub-problem `h_r` with its frozen data.
pub(crate) struct StepObjective<'a> {
    origin: &'a DMatrix<f64>,
    transport: &'a DMatrix<f64>,
    tau: f64,
    anchor_state: &'a DMatrix<f64>,
    anchor_control: &'a DMatrix<f64>,
    ws: &'a DisparityWorkspace,
    lambda: f64,
    rho: f64,
}

pub(crate) type Preconditioner = Cholesky<f64, Dyn>;

/// Whether `h_r` over `n` points is solved matrix-free (and so preconditioned).
pub(crate) fn uses_cg(n: usize) -> bool {
    3 * n > DENSE_LIMIT
}

/// Factor of `τ²UᵀU + I`, the Hessian of the quadratic terms up to `2ρ`.
/// Used to precondition the matrix-free Newton solves.
pub(crate) fn quadratic_factor(transport: &DMatrix<f64>, tau: f64) -> Option<Preconditioner> {
    let mut m = transport.tr_mul(transport) * (tau * tau);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    m.cholesky()
}

impl<'a> StepObjective<'a> {
    fn state(&self, alpha: &DMatrix<f64>) -> DMatrix<f64> {
        self.origin + (self.transport * alpha) * self.tau
    }

    fn value(&self, alpha: &DMatrix<f64>) -> f64 {
        let x = self.state(alpha);
        let d = dsd_points(&block_to_points(&x), self.ws);
        self.lambda * d
            + self.rho * (&x - self.anchor_state).norm_squared()
            + self.rho * (alpha - self.anchor_control).norm_squared()
    }

    /// Value, gradient and the disparity cache at the moved grid.
    fn local(&self, alpha: &DMatrix<f64>) -> (f64, DMatrix<f64>, LocalDisparity<'a>) {
        let x = self.state(alpha);
        let local = LocalDisparity::new(&block_to_points(&x), self.ws);
        let misfit = &x - self.anchor_state;
        let offset = alpha - self.anchor_control;
        let value = self.lambda * local.value + self.rho * misfit.norm_squared() + self.rho * offset.norm_squared();
        let dx = points_to_block(&local.gradient) * self.lambda + misfit * (2.0 * self.rho);
        let grad = self.transport.tr_mul(&dx) * self.tau + offset * (2.0 * self.rho);
        (value, grad, local)
    }

    fn hessian_vec(&self, local: &LocalDisparity<'_>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let uv = (self.transport * v) * self.tau;
        let hv = points_to_block(&local.hessian_vec(&block_to_points(&uv)));
        let inner = hv * self.lambda + &uv * (2.0 * self.rho);
        self.transport.tr_mul(&inner) * self.tau + v * (2.0 * self.rho)
    }

    /// Dense Hessian in `3j + c` ordering.
    fn hessian(&self, local: &LocalDisparity<'_>) -> DMatrix<f64> {
        let n = self.transport.ncols();
        let rows = self.transport.nrows();
        let b = local.hessian();
        let u = self.transport;
        let t2 = self.tau * self.tau;
        let utu = u.tr_mul(u);
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        for c in 0..3 {
            for d in 0..3 {
                let bcd = DMatrix::from_fn(rows, rows, |i, m| b[(3 * i + c, 3 * m + d)]);
                let mut block = u.tr_mul(&(bcd * u)) * (self.lambda * t2);
                if c == d {
                    block += &utu * (2.0 * self.rho * t2);
                }
                for j in 0..n {
                    for l in 0..n {
                        h[(3 * j + c, 3 * l + d)] = block[(j, l)];
                    }
                }
            }
        }
        for i in 0..3 * n {
            h[(i, i)] += 2.0 * self.rho;
        }
        // Symmetrize away the rounding of the triple products.
        let ht = h.transpose();
        (h + ht) * 0.5
    }
}

fn flatten(m: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(m.nrows() * 3, |i, _| m[(i / 3, i % 3)])
}

fn unflatten(v: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(v.len() / 3, 3, |i, c| v[3 * i + c])
}

/// Newton direction from a dense Cholesky solve, `None` when indefinite.
fn dense_direction(obj: &StepObjective<'_>, local: &LocalDisparity<'_>, grad: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let h = obj.hessian(local);
    let chol = h.cholesky()?;
    let d = chol.solve(&flatten(grad));
    Some(unflatten(&(-d)))
}

/// Truncated conjugate gradients on `H d = −g`; `None` on negative curvature
/// at the very first direction.
fn cg_direction(
    obj: &StepObjective<'_>,
    local: &LocalDisparity<'_>,
    grad: &DMatrix<f64>,
    precond: Option<&Preconditioner>,
) -> Option<DMatrix<f64>> {
    let g_norm = grad.norm();
    let tol = g_norm * g_norm.sqrt().min(0.5).max(1e-10);
    let apply = |r: &DMatrix<f64>| match precond {
        Some(f) => f.solve(r),
        None => r.clone(),
    };
    let mut d = DMatrix::zeros(grad.nrows(), 3);
    let mut r = -grad;
    let mut z = apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let max_iter = (grad.len()).min(250);
    for i in 0..max_iter {
        let hp = obj.hessian_vec(local, &p);
        let php = p.dot(&hp);
        if !(php > 0.0) {
            return if i == 0 { None } else { Some(d) };
        }
        let step = rz / php;
        d += &p * step;
        r -= &hp * step;
        if r.norm() <= tol {
            break;
        }
        z = apply(&r);
        let rz_next = r.dot(&z);
        p = &z + &p * (rz_next / rz);
        rz = rz_next;
    }
    Some(d)
}

/// Minimizes one `h_r` from `start`.
pub(crate) fn newton(
    obj: &StepObjective<'_>,
    start: DMatrix<f64>,
    options: &NewtonOptions,
    precond: Option<&Preconditioner>,
    step_index: usize,
) -> Result<(DMatrix<f64>, InnerRun)> {
    let dense = !uses_cg(start.nrows());
    let mut alpha = start;
    let (mut value, mut grad, mut local) = obj.local(&alpha);
    let threshold = options.tol * grad.norm().max(1.0);
    let mut run = InnerRun {
        iterations: 0,
        gradient_norm: grad.norm(),
        objective: vec![value],
    };
    for it in 0..options.max_iterations {
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "disparity prox diverged at inner iteration {it} of step r = {step_index}"
            )));
        }
        if run.gradient_norm <= threshold {
            break;
        }
        let newton_dir = if dense {
            dense_direction(obj, &local, &grad)
        } else {
            cg_direction(obj, &local, &grad, precond)
        };
        let mut dir = newton_dir.unwrap_or_else(|| -&grad);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            dir = -&grad;
            slope = -grad.norm_squared();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &alpha + &dir * t;
            let v = obj.value(&trial);
            if v.is_finite() && v <= value + ARMIJO_C * t * slope && v < value {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // No decrease left at working precision.
            break;
        };
        alpha = next;
        (value, grad, local) = obj.local(&alpha);
        run.iterations = it + 1;
        run.gradient_norm = grad.norm();
        run.objective.push(value);
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "disparity prox produced a non-finite control at step r = {step_index}"
        )));
    }
    Ok((alpha, run))
}

/// Sequential minimization of `h = Σ_r h_r` around `anchor`.
pub fn disparity_prox(
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    problem: &SnapshotProblem,
    options: &NewtonOptions,
) -> Result<SplitPoint> {
    disparity_prox_runs(anchor, transports, problem, options).map(|(point, _)| point)
}

/// [`disparity_prox`] that also returns the inner Newton diagnostics.
pub fn disparity_prox_runs(
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    problem: &SnapshotProblem,
    options: &NewtonOptions,
) -> Result<(SplitPoint, Vec<InnerRun>)> {
    sequential_prox(anchor, transports, problem, options, &[])
}

/// The sequential minimization; `cached[r]`, when present, preconditions step
/// `r` instead of a freshly computed factor.
pub(crate) fn sequential_prox(
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    problem: &SnapshotProblem,
    options: &NewtonOptions,
    cached: &[Option<Preconditioner>],
) -> Result<(SplitPoint, Vec<InnerRun>)> {
    let l = problem.steps();
    if transports.len() != l || anchor.controls.len() != l || anchor.states.len() != l + 1 {
        return Err(Error::input("disparity prox: anchor or transports have the wrong length"));
    }
    let steps = problem.time.steps();
    let mut states = Vec::with_capacity(l + 1);
    states.push(anchor.states[0].clone());
    let mut controls = Vec::with_capacity(l);
    let mut runs = Vec::with_capacity(l);
    for r in 0..l {
        let obj = StepObjective {
            origin: &states[r],
            transport: &transports[r],
            tau: steps[r],
            anchor_state: &anchor.states[r + 1],
            anchor_control: &anchor.controls[r],
            ws: &problem.disparities()[r],
            lambda: problem.lambda,
            rho: problem.rho,
        };
        let fresh;
        let precond = match cached.get(r) {
            Some(Some(f)) => Some(f),
            _ if uses_cg(anchor.controls[r].nrows()) => {
                fresh = quadratic_factor(&transports[r], steps[r]);
                fresh.as_ref()
            }
            _ => None,
        };
        let (alpha, run) = newton(&obj, anchor.controls[r].clone(), options, precond, r)?;
        let next = obj.state(&alpha);
        states.push(next);
        controls.push(alpha);
        runs.push(run);
    }
    Ok((SplitPoint { states, controls }, runs))
}
