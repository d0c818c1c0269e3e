//! Kinetic proximal step: an equality-constrained quadratic program.
//!
//! Given an anchor `(w, a)` and frozen transport matrices `Uᵏ`, the step solves
//!
//! ```text
//! minimize   ½ Σₖ τₖ (αᵏ)ᵀ 𝐊 αᵏ + ρ Σₖ ‖xᵏ − wᵏ‖² + ρ Σₖ ‖αᵏ − aᵏ‖²
//! subject to xᵏ⁺¹ = xᵏ + τₖ Uᵏ αᵏ,  x⁰ fixed.
//! ```
//!
//! The constraints are eliminated (`xᵏ = x⁰ + Σ_{j<k} τⱼ Uʲ αʲ`), leaving the
//! normal equations `A α = b` with
//!
//! ```text
//! A_jl = δ_jl (τⱼ 𝐊 + 2ρ I) + 2ρ τⱼ τₗ (L − max(j, l)) (Uʲ)ᵀ Uˡ
//! b_j  = 2ρ aʲ + 2ρ τⱼ (Uʲ)ᵀ Σ_{k>j} (wᵏ − x⁰)
//! ```
//!
//! With every `Uᵏ = 𝐊` the matrix never changes, so it is assembled and
//! factorized once per solve. When the `Uᵏ` follow the iterates, the same
//! factor preconditions a conjugate-gradient solve whose operator applies the
//! current `Uᵏ` through prefix sums, so no per-iteration factorization happens.

use nalgebra::DMatrix;

use super::{split_rows, stack_rows, SplitPoint};
use crate::error::{Error, Result};
use crate::kernel::{factorize_spd, CholeskyFactor};
use crate::problem::SnapshotProblem;

/// Relative residual at which the conjugate-gradient refinement stops.
const CG_TOL: f64 = 1e-13;
/// Worst residual still accepted when the iteration cap is hit.
const CG_ACCEPT: f64 = 1e-8;

/// Cached factorization of the fixed reduced matrix.
#[derive(Debug, Clone)]
pub struct QuadraticProx {
    gram: DMatrix<f64>,
    factor: CholeskyFactor,
    steps: Vec<f64>,
    rho: f64,
    factorizations: usize,
}

impl QuadraticProx {
    /// Assembles the reduced matrix for `Uᵏ ≡ 𝐊` and factorizes it.
    pub fn new(problem: &SnapshotProblem, gram: &DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        let steps = problem.time.steps().to_vec();
        let l = steps.len();
        let rho = problem.rho;
        let ridge = problem.kernels.absolute_ridge();
        let gram_sq = gram.transpose() * gram;
        let mut a = DMatrix::zeros(n * l, n * l);
        for j in 0..l {
            for m in 0..l {
                let w = 2.0 * rho * steps[j] * steps[m] * (l - j.max(m)) as f64;
                let mut block = &gram_sq * w;
                if j == m {
                    block += gram * steps[j];
                    for i in 0..n {
                        block[(i, i)] += 2.0 * rho + ridge;
                    }
                }
                a.view_mut((j * n, m * n), (n, n)).copy_from(&block);
            }
        }
        let factor = factorize_spd(&a, 0.0)?;
        Ok(QuadraticProx {
            gram: gram.clone(),
            factor,
            steps,
            rho,
            factorizations: 1,
        })
    }

    /// Cholesky factorizations performed so far; `apply` never adds any.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    fn n(&self) -> usize {
        self.gram.nrows()
    }

    /// Prefix sums `s_k = Σ_{j<k} τⱼ Uʲ pʲ` for `k = 1..L`.
    fn forward(&self, transports: &[DMatrix<f64>], p: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(self.n(), 3);
        let mut out = Vec::with_capacity(p.len());
        for ((u, pj), &tau) in transports.iter().zip(p).zip(&self.steps) {
            acc += (u * pj) * tau;
            out.push(acc.clone());
        }
        out
    }

    /// `τⱼ (Uʲ)ᵀ Σ_{k>j} r_k` for residual blocks `r_k`, `k = 1..L`.
    fn backward(&self, transports: &[DMatrix<f64>], r: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let l = r.len();
        let mut tail = DMatrix::zeros(self.n(), 3);
        let mut out = vec![DMatrix::zeros(self.n(), 3); l];
        for j in (0..l).rev() {
            tail += &r[j];
            out[j] = transports[j].tr_mul(&tail) * self.steps[j];
        }
        out
    }

    fn apply_operator(&self, transports: &[DMatrix<f64>], p: &DMatrix<f64>) -> DMatrix<f64> {
        let blocks = split_rows(p, self.steps.len());
        let sums = self.forward(transports, &blocks);
        let back = self.backward(transports, &sums);
        let out: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&back)
            .zip(&self.steps)
            .map(|((pj, bj), &tau)| (&self.gram * pj) * tau + pj * (2.0 * self.rho) + bj * (2.0 * self.rho))
            .collect();
        stack_rows(&out)
    }

    /// Exact minimizer for the given anchor and frozen transports.
    pub fn apply(
        &self,
        anchor: &SplitPoint,
        transports: &[DMatrix<f64>],
    ) -> Result<SplitPoint> {
        let l = self.steps.len();
        if transports.len() != l || anchor.controls.len() != l || anchor.states.len() != l + 1 {
            return Err(Error::input("quadratic prox: anchor or transports have the wrong length"));
        }
        let x0 = &anchor.states[0];
        let offsets: Vec<DMatrix<f64>> = anchor.states[1..].iter().map(|w| w - x0).collect();
        let pulled = self.backward(transports, &offsets);
        let rhs_blocks: Vec<DMatrix<f64>> = anchor
            .controls
            .iter()
            .zip(&pulled)
            .map(|(a, b)| (a + b) * (2.0 * self.rho))
            .collect();
        let rhs = stack_rows(&rhs_blocks);
        let alpha = self.pcg(transports, &rhs)?;

        let controls = split_rows(&alpha, l);
        let sums = self.forward(transports, &controls);
        let mut states = Vec::with_capacity(l + 1);
        states.push(x0.clone());
        states.extend(sums.iter().map(|s| x0 + s));
        Ok(SplitPoint { states, controls })
    }

    fn pcg(&self, transports: &[DMatrix<f64>], rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let b_norm = rhs.norm();
        if b_norm == 0.0 {
            return Ok(DMatrix::zeros(rhs.nrows(), 3));
        }
        let mut x = self.factor.solve_matrix(rhs);
        let mut r = rhs - self.apply_operator(transports, &x);
        let mut rel = r.norm() / b_norm;
        if rel <= CG_TOL {
            return Ok(x);
        }
        let mut z = self.factor.solve_matrix(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        let max_iter = (rhs.nrows() * 3).clamp(50, 2000);
        for _ in 0..max_iter {
            let ap = self.apply_operator(transports, &p);
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                return Err(Error::Numeric(format!(
                    "quadratic prox: operator lost positive definiteness (pᵀAp = {pap:e})"
                )));
            }
            let step = rz / pap;
            x += &p * step;
            r -= &ap * step;
            rel = r.norm() / b_norm;
            if rel <= CG_TOL {
                return Ok(x);
            }
            z = self.factor.solve_matrix(&r);
            let rz_next = r.dot(&z);
            p = &z + &p * (rz_next / rz);
            rz = rz_next;
        }
        if rel <= CG_ACCEPT && rel.is_finite() {
            Ok(x)
        } else {
            Err(Error::Numeric(format!(
                "quadratic prox: conjugate gradients stalled at relative residual {rel:e}"
            )))
        }
    }
}

/// One-shot kinetic prox: factorizes, then solves. The solver keeps a
/// [`QuadraticProx`] instead so the factorization happens once.
pub fn quadratic_prox(
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    problem: &SnapshotProblem,
) -> Result<SplitPoint> {
    let gram = crate::kernel::gram(problem.initial.points(), &problem.kernels.velocity());
    QuadraticProx::new(problem, &gram)?.apply(anchor, transports)
}

/// Largest relative violation of `xᵏ⁺¹ = xᵏ + τₖ Uᵏ αᵏ`.
pub fn constraint_residual(point: &SplitPoint, transports: &[DMatrix<f64>], steps: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..steps.len() {
        let predicted = &point.states[k] + (&transports[k] * &point.controls[k]) * steps[k];
        let scale = point.states[k + 1].norm().max(predicted.norm()).max(1e-300);
        worst = worst.max((&point.states[k + 1] - predicted).norm() / scale);
    }
    worst
}

/// Relative stationarity residual of the KKT system at `point`.
///
/// Multipliers follow from the state equations, `μ^{L−1} = −2ρ(x^L − w^L)`
/// and `μ^{k−1} = μᵏ − 2ρ(xᵏ − wᵏ)`; what remains is the control equation
/// `(τₖ𝐊 + 2ρ)αᵏ − 2ρaᵏ − τₖ (Uᵏ)ᵀ μᵏ`. The scale includes the anchor's own
/// pull, so near-cancelling terms at large `ρ` do not inflate the ratio.
pub fn kkt_residual(
    point: &SplitPoint,
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    gram: &DMatrix<f64>,
    steps: &[f64],
    rho: f64,
) -> f64 {
    let l = steps.len();
    let n = gram.nrows();
    let x0 = &anchor.states[0];
    let mut mu = vec![DMatrix::zeros(n, 3); l];
    let mut drift = vec![DMatrix::zeros(n, 3); l];
    mu[l - 1] = (&point.states[l] - &anchor.states[l]) * (-2.0 * rho);
    drift[l - 1] = (&anchor.states[l] - x0) * (2.0 * rho);
    for k in (1..l).rev() {
        mu[k - 1] = &mu[k] - (&point.states[k] - &anchor.states[k]) * (2.0 * rho);
        drift[k - 1] = &drift[k] + (&anchor.states[k] - x0) * (2.0 * rho);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..l {
        let kin = (gram * &point.controls[k]) * steps[k];
        let prox = (&point.controls[k] - &anchor.controls[k]) * (2.0 * rho);
        let pull = transports[k].tr_mul(&mu[k]) * steps[k];
        let data = transports[k].tr_mul(&drift[k]) * steps[k] + &anchor.controls[k] * (2.0 * rho);
        num += (&kin + &prox - &pull).norm_squared();
        den += kin.norm_squared() + prox.norm_squared() + pull.norm_squared() + data.norm_squared();
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}
